"""Finite-dimensional dual of semidiscrete optimal transport.

For a discrete ``P = sum_i p_i delta_{x_i}`` and a (weighted) sample ``Q`` the
transport cost is the maximum over ``z in R^N`` of the concave function

    g(z) = sum_i p_i z_i + sum_j w_j min_i {c(x_i, y_j) - z_i}.

The maximiser is found by projected gradient ascent with backtracking and
iterate averaging, then finished exactly: a small linear program over the
sample points that are nearly tied between cells is solved and its optimality
is certified against the full objective.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .cost import CostSpec, cost, cost_matrix
from .measures import DiscreteMeasure, RandomSource, Sample, exact_unit_weights

log = logging.getLogger(__name__)

GAUGES = ("first_zero", "mean_zero", "raw")


class NonPositiveWeightError(ValueError):
    """An operation that needs p_i > 0 met a zero-weight atom."""


@dataclass(frozen=True)
class Potential:
    """Dual vector ``z`` (values of the potential at the atoms) with its gauge."""

    z: np.ndarray
    gauge: str = "mean_zero"

    def __post_init__(self):
        z = np.array(self.z, dtype=float).ravel()
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}")
        fin = z[np.isfinite(z)]
        if self.gauge == "first_zero" and len(fin) and fin[0] != 0.0:
            raise ValueError("first_zero gauge needs z[0] == 0")
        if self.gauge == "mean_zero" and abs(fin.sum()) > 1e-10 * max(1.0, np.abs(fin).max(initial=0)):
            raise ValueError("mean_zero gauge needs sum(z) == 0")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)

    def __len__(self):
        return len(self.z)

    def to_gauge(self, gauge: str) -> "Potential":
        return Potential(to_gauge(self.z, gauge), gauge)

    def to_json(self) -> dict:
        return {"z": [None if not np.isfinite(v) else float(v) for v in self.z], "gauge": self.gauge}


def to_gauge(z, gauge: str) -> np.ndarray:
    """Shift ``z`` by a constant so that it satisfies ``gauge`` (NaN entries ignored)."""
    z = np.array(z, dtype=float)
    fin = np.isfinite(z)
    if gauge == "mean_zero":
        z[fin] -= z[fin].mean()
        # a second pass removes the rounding left by the first
        z[fin] -= z[fin].mean()
    elif gauge == "first_zero":
        if fin.any():
            z[fin] -= z[fin][0]
    elif gauge != "raw":
        raise ValueError(f"unknown gauge {gauge!r}")
    return z


def _zvec(z) -> np.ndarray:
    return np.asarray(z.z if isinstance(z, Potential) else z, dtype=float)


@dataclass
class SolveOptions:
    tol_grad: float = 1e-3
    max_iters: int = 500
    multistart: int = 1
    rng: RandomSource = field(default_factory=lambda: RandomSource(0))
    gauge: str = "mean_zero"

    def __post_init__(self):
        if not self.tol_grad > 0:
            raise ValueError("tol_grad must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.multistart < 1:
            raise ValueError("multistart must be >= 1")
        if self.gauge not in GAUGES:
            raise ValueError(f"unknown gauge {self.gauge!r}")


@dataclass
class DualSolveResult:
    potential: Potential
    cost_value: float
    grad_norm: float
    iterations: int
    cell_masses: np.ndarray
    converged: bool = True
    candidates: list = field(default_factory=list)
    kstar: float = float("nan")

    def to_json(self) -> dict:
        return {
            "potential": self.potential.to_json(),
            "cost_value": self.cost_value,
            "grad_norm": self.grad_norm,
            "iterations": self.iterations,
            "cell_masses": self.cell_masses.tolist(),
            "converged": self.converged,
            "kstar": self.kstar,
            "candidates": [c.to_json() for c in self.candidates],
        }


# ---------------------------------------------------------------------------
# Objective pieces on a precomputed cost matrix
# ---------------------------------------------------------------------------

class SemiDual:
    """The dual objective for weights ``p`` and cost matrix ``C`` (atoms x rows).

    ``w`` are the sample weights (uniform ``1/m`` for a plain sample; bootstrap
    resamples use multiplicities ``k_j / m`` on the original rows).
    """

    def __init__(self, p, C, w=None):
        self.p = np.asarray(p, dtype=float)
        self.C = np.asarray(C, dtype=float)
        m = self.C.shape[1]
        self.w = np.full(m, 1.0 / m) if w is None else np.asarray(w, dtype=float)
        if self.C.shape[0] != len(self.p) or len(self.w) != m:
            raise ValueError("inconsistent shapes for p, C and w")
        self._cols = np.arange(m)

    @property
    def n_atoms(self) -> int:
        return len(self.p)

    def assign(self, z) -> np.ndarray:
        return np.argmin(self.C - _zvec(z)[:, None], axis=0)

    def inner(self, z) -> np.ndarray:
        """``f_z(y_j) = min_i {C_ij - z_i}`` for every row."""
        return np.min(self.C - _zvec(z)[:, None], axis=0)

    def value(self, z) -> float:
        z = _zvec(z)
        return float(self.p @ z + self.w @ self.inner(z))

    def masses(self, z) -> np.ndarray:
        """Sample mass of every cell, normalised so the compensated sum is exactly 1."""
        return exact_unit_weights(np.bincount(self.assign(z), weights=self.w, minlength=self.n_atoms))

    def value_and_grad(self, z):
        z = _zvec(z)
        R = self.C - z[:, None]
        idx = R.argmin(axis=0)
        f = R[idx, self._cols]
        masses = np.bincount(idx, weights=self.w, minlength=self.n_atoms)
        return float(self.p @ z + self.w @ f), self.p - masses

    def kstar(self) -> float:
        if np.any(self.p <= 0):
            raise NonPositiveWeightError("K* needs strictly positive atom weights")
        return float((self.C * self.w).sum(axis=1).max() / self.p.min())


def _problem(P: DiscreteMeasure, Qs: Sample, spec: CostSpec, weights=None) -> SemiDual:
    return SemiDual(P.weights, cost_matrix(spec, P.points, Qs.rows), weights)


def _project(g: np.ndarray, gauge: str) -> np.ndarray:
    if gauge == "mean_zero":
        return g - g.mean()
    if gauge == "first_zero":
        return g[1:]
    return g


# ---------------------------------------------------------------------------
# Public point-wise operations
# ---------------------------------------------------------------------------

def assign(y, P: DiscreteMeasure, z, spec: CostSpec) -> int:
    """Index (0-based) of the cell containing ``y``; ties go to the lowest index."""
    z = _zvec(z)
    vals = [cost(spec, x, y) - zi for x, zi in zip(P.points, z)]
    return int(np.argmin(vals))


def dual_value(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec, weights=None) -> float:
    return _problem(P, Qs, spec, weights).value(z)


def cell_masses(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec, weights=None) -> np.ndarray:
    """Fraction of the sample assigned to each atom."""
    return _problem(P, Qs, spec, weights).masses(z)


def dual_gradient(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec, weights=None) -> np.ndarray:
    """``p - cell_masses`` projected according to the gauge of ``z``.

    A raw array is treated as gauge ``raw``; for ``first_zero`` the first
    component is dropped.
    """
    gauge = z.gauge if isinstance(z, Potential) else "raw"
    _, g = _problem(P, Qs, spec, weights).value_and_grad(z)
    return _project(g, gauge)


def kstar_bound(P: DiscreteMeasure, Qs: Sample, spec: CostSpec) -> float:
    """A priori bound on the spread of an optimal dual vector.

    ``(1 / min_i p_i) * max_i mean_j c(y_j, x_i)``
    """
    if np.any(P.weights <= 0):
        raise NonPositiveWeightError("K* needs strictly positive atom weights")
    return _problem(P, Qs, spec).kstar()


def lipschitz_gap(z, s, P: DiscreteMeasure, y, spec: CostSpec) -> float:
    """``|f_z(y) - f_s(y)|`` for the two inf-convolutions ``f_z = min_i c(x_i, .) - z_i``."""
    z, s = _zvec(z), _zvec(s)
    if len(z) != len(s):
        raise ValueError("potentials of different length")
    c = np.array([cost(spec, x, y) for x in P.points])
    return float(abs((c - z).min() - (c - s).min()))


# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------

_FULL_LP_PAIRS = 4096
_MAX_POLISH_ROUNDS = 12
_HIGHS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}


def _ascend(prob: SemiDual, z0: np.ndarray, box: float, tol: float, max_iters: int):
    """Projected gradient ascent in the mean-zero subspace.

    Returns ``(z, value, grad, step, iterations)`` for the best point seen.
    """
    z = to_gauge(z0, "mean_zero")
    f, g = prob.value_and_grad(z)
    g = g - g.mean()
    best = (f, z, g)
    step = 1.0
    avg, n_avg = np.zeros_like(z), 0
    it = last_gain = 0
    for it in range(1, max_iters + 1):
        if np.abs(g).max() <= tol or it - last_gain > 50:
            break
        gg = g @ g
        for _ in range(40):
            cand = z + step * g
            top = np.abs(cand).max()
            if top > box:
                cand *= box / top
            fc, gc = prob.value_and_grad(cand)
            if fc >= f + 1e-4 * step * gg:
                break
            step *= 0.5
        else:
            break
        z, f, g = cand, fc, gc - gc.mean()
        step *= 2.0
        if f > best[0] + 1e-12 * max(1.0, abs(best[0])):
            last_gain = it
        if f > best[0]:
            best = (f, z, g)
        avg += z
        n_avg += 1
        if n_avg == 20:
            za = avg / n_avg
            fa, ga = prob.value_and_grad(za)
            if fa > best[0]:
                best = (fa, za, ga - ga.mean())
                z, f, g = best[1], fa, best[2]
            avg[:] = 0.0
            n_avg = 0
    return best[1], best[0], best[2], step, it


def _polish(prob: SemiDual, z: np.ndarray, eps: float, box: float, target=None, direction=None,
            cand=None):
    """Exact maximisation on the rows that are nearly tied at ``z``.

    Rows whose best cell beats every other by more than ``eps`` are pinned to
    that cell; the remaining rows enter a linear program.  Pinning can only
    raise the optimum, so when the full objective at the LP solution equals
    the LP value the solution is a certified maximiser.  Otherwise the band
    is widened, around the LP solution if it improved on ``z``, and the LP is
    solved again.

    With ``target`` and ``direction`` the LP instead maximises
    ``direction @ z`` over the points whose objective is at least ``target``,
    which selects an extreme point of the optimal face.
    """
    N, m = prob.C.shape
    p, C, w = prob.p, prob.C, prob.w
    for rnd in range(_MAX_POLISH_ROUNDS):
        R = C - z[:, None]
        near = R <= R.min(axis=0) + eps
        cand = near if cand is None else (cand | near)
        n_c = cand.sum(axis=0)
        forced = n_c == 1
        amb = np.flatnonzero(~forced)
        f_cell = np.argmax(cand[:, forced], axis=0)
        f_rows = np.flatnonzero(forced)
        forced_mass = np.bincount(f_cell, weights=w[f_rows], minlength=N)
        const = float(w[f_rows] @ C[f_cell, f_rows])
        k = len(amb)
        ii, jj = np.nonzero(cand[:, amb])
        n_con = len(ii)
        rows = np.repeat(np.arange(n_con), 2)
        cols = np.column_stack([ii, N + jj]).ravel()
        A = sparse.csr_matrix((np.ones(2 * n_con), (rows, cols)), shape=(n_con, N + k))
        b = C[ii, amb[jj]]
        obj = np.concatenate([p - forced_mass, w[amb]])
        bounds = [(0.0, 0.0)] + [(-box, box)] * (N - 1) + [(None, None)] * k
        if direction is None:
            res = linprog(-obj, A_ub=A, b_ub=b, bounds=bounds, method="highs", options=_HIGHS)
        else:
            dir_obj = np.concatenate([direction, np.zeros(k)])
            A2 = sparse.vstack([A, sparse.csr_matrix(-obj[None, :])]).tocsr()
            b2 = np.append(b, const - target)
            res = linprog(-dir_obj, A_ub=A2, b_ub=b2, bounds=bounds, method="highs", options=_HIGHS)
        if res.status != 0:
            log.debug("polish LP status %s: %s", res.status, res.message)
            return None
        z_new = res.x[:N]
        lp_val = float(obj @ res.x + const)
        tol = 1e-10 * max(1.0, abs(lp_val))
        true_val = prob.value(z_new)
        if true_val < lp_val - tol and direction is None:
            # the LP value bounds the optimum from above, so the centre is
            # certified too when it reaches it (the LP can be flat in z)
            z_val = prob.value(z)
            if z_val >= lp_val - tol:
                z_new, true_val = z.copy(), z_val
        if true_val >= lp_val - tol:
            flow = -res.ineqlin.marginals[:n_con]
            plan = forced_mass + np.bincount(ii, weights=flow, minlength=N)
            return z_new, true_val, plan, cand, rnd + 1
        if np.all(cand):
            return None
        # re-centre only on improvement: a restricted optimum far out on the
        # box would make almost every row ambiguous
        if true_val > prob.value(z):
            z = z_new
        eps *= 4.0
    return None


def _solve_problem(prob: SemiDual, opts: SolveOptions, z0=None) -> DualSolveResult:
    p = prob.p
    N, m = prob.C.shape
    keep = np.flatnonzero(p > 0)
    rows = np.flatnonzero(prob.w > 0)
    sub = SemiDual(p[keep], prob.C[np.ix_(keep, rows)], prob.w[rows])
    sub.p = sub.p / math.fsum(sub.p)
    kstar = sub.kstar()
    box = kstar + 1.0

    def full(zk, fill=np.nan):
        out = np.full(N, fill)
        out[keep] = zk
        return out

    start = np.zeros(len(keep)) if z0 is None else to_gauge(np.asarray(z0, float)[keep], "mean_zero")
    if len(keep) == 1:
        z = np.zeros(1)
        val = sub.value(z)
        pot = Potential(to_gauge(full(z), opts.gauge), opts.gauge)
        return DualSolveResult(pot, val, 0.0, 0, full(np.ones(1), 0.0), True, [pot], kstar)

    if len(keep) * len(rows) <= _FULL_LP_PAIRS:
        # small enough for the exact program on every row; no warm start needed
        z, f, g, step, iters = start, *sub.value_and_grad(start), 1.0, 0
        eps = np.inf
    else:
        z, f, g, step, iters = _ascend(sub, start, box, opts.tol_grad, opts.max_iters)
        scale = max(float(np.abs(sub.C).mean()), 1e-300)
        eps = max(4.0 * step * float(np.abs(g).max()), 1e-9 * scale)
    out = _polish(sub, z, eps, box)
    converged = out is not None
    if converged:
        z_opt, val, plan, cand, rounds = out
        grad_norm = float(np.abs(sub.p - plan).max())
    else:
        log.warning("exact finishing step failed; returning best ascent iterate")
        z_opt, val, cand, rounds = z, f, None, 0
        grad_norm = float(np.abs(g).max())
    z_opt = to_gauge(z_opt, "mean_zero")
    top = np.abs(z_opt).max()
    if top > box:
        z_opt = z_opt * (box / top)
        val = sub.value(z_opt)

    candidates = [z_opt]
    gen = opts.rng.generator() if opts.multistart > 1 else None
    for _ in range(1, opts.multistart if converged else 1):
        zs = to_gauge(gen.uniform(-kstar, kstar, len(keep)), "mean_zero")
        if eps != np.inf:
            zs, *_ = _ascend(sub, zs, box, opts.tol_grad, opts.max_iters)
        direction = to_gauge(gen.standard_normal(len(keep)), "mean_zero")
        alt = _polish(sub, zs, np.inf if eps == np.inf else eps, box,
                      target=val - 1e-11 * max(1.0, abs(val)), direction=direction, cand=cand)
        if alt is None or alt[1] < val - 1e-9 * max(1.0, abs(val)):
            continue
        zc = to_gauge(alt[0], "mean_zero")
        if all(np.abs(zc - c).max() > 1e-6 for c in candidates):
            candidates.append(zc)

    pot = Potential(to_gauge(full(z_opt), opts.gauge), opts.gauge)
    cands = [Potential(to_gauge(full(c), opts.gauge), opts.gauge) for c in candidates]
    masses = np.zeros(N)
    masses[keep] = sub.masses(z_opt)
    if not converged:
        log.warning("dual solve did not converge: grad_norm=%.3g", grad_norm)
    return DualSolveResult(pot, val, grad_norm, iters + rounds, masses, converged, cands, kstar)


def solve_dual(P: DiscreteMeasure, Qs: Sample, spec: CostSpec, opts: SolveOptions | None = None,
               weights=None, z0=None) -> DualSolveResult:
    """Maximise the semidiscrete dual for ``P`` against the sample ``Qs``.

    Atoms with zero weight (possible for empirical ``P``) are dropped before
    solving and get ``NaN`` potentials. ``weights`` optionally reweights the
    sample rows; ``z0`` warm-starts the ascent.
    """
    opts = opts or SolveOptions()
    return _solve_problem(_problem(P, Qs, spec, weights), opts, z0)


def solve_arrays(p, C, w=None, opts: SolveOptions | None = None, z0=None) -> DualSolveResult:
    """:func:`solve_dual` on a precomputed cost matrix."""
    return _solve_problem(SemiDual(p, C, w), opts or SolveOptions(), z0)


def transport_cost(P: DiscreteMeasure, Qs: Sample, spec: CostSpec, opts: SolveOptions | None = None,
                   weights=None) -> float:
    return solve_dual(P, Qs, spec, opts, weights).cost_value
