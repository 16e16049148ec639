"""Bootstrap for the transport cost and the central limit theorem for potentials.

Potentials are estimated from an empirical ``P_n``; their fluctuation is
``H^+ A H^+`` where ``H`` is the Hessian of the dual objective (estimated by
finite differences of cell masses or by a slab around each cell interface)
and ``A`` the covariance of the score ``e_k - Q(A(z))``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .clt import regime_lambda
from .cost import CostSpec, cost_matrix, grad_matrix
from .measures import (ContinuousSpec, DiscreteMeasure, RandomSource, Sample, exact_unit_weights,
                       sample_continuous)
from .parallel import parallel_map
from .semidual import (DualSolveResult, SemiDual, SolveOptions, _problem, _solve_problem,
                       _zvec, to_gauge)

log = logging.getLogger(__name__)

MAX_EXCLUDED_FRACTION = 0.01


class BootstrapError(RuntimeError):
    """Too many bootstrap replicates failed to solve."""


class SingularHessianError(ValueError):
    """The Hessian estimate is (numerically) singular on the mean-zero subspace."""


@dataclass
class BootstrapResult:
    draws: np.ndarray
    rate: float
    point_estimate: float
    excluded: int = 0
    regime: str = "one_sample_Q"

    def quantile(self, alpha: float) -> float:
        return float(np.quantile(self.draws, alpha))

    @property
    def B(self) -> int:
        return len(self.draws)

    def to_json(self) -> dict:
        return {"regime": self.regime, "rate": self.rate, "point_estimate": self.point_estimate,
                "excluded": self.excluded, "B": self.B}


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _resampled_problem(ctx, k):
    """Weights of replicate ``k`` drawn from its own stream."""
    gen = ctx["rng"].spawn(k).generator()
    p, w = ctx["p"], ctx["w"]
    if ctx["resample_p"]:
        p = exact_unit_weights(gen.multinomial(ctx["n"], p))
    if ctx["resample_q"]:
        w = gen.multinomial(ctx["m"], w) / ctx["m"]
    return SemiDual(p, ctx["C"], w)


def _cost_replicate(ctx, k):
    res = _solve_problem(_resampled_problem(ctx, k), ctx["opts"])
    return res.cost_value if res.converged else None


def _potential_replicate(ctx, k):
    res = _solve_problem(_resampled_problem(ctx, k), ctx["opts"])
    z = res.potential.z
    if not res.converged or not np.all(np.isfinite(z)):
        return None
    return to_gauge(z, "mean_zero")


def _context(P, Qs, spec, opts, rng, resample_p, resample_q, n, weights=None):
    C = cost_matrix(spec, P.points, Qs.rows)
    m = Qs.size
    w = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, float)
    return {"p": np.asarray(P.weights, float), "C": C, "w": w, "n": n, "m": m,
            "resample_p": resample_p, "resample_q": resample_q,
            "opts": opts, "rng": rng}


def _check_excluded(n_bad, B):
    if n_bad > MAX_EXCLUDED_FRACTION * B:
        raise BootstrapError(f"{n_bad} of {B} bootstrap replicates failed to solve "
                             f"(more than {MAX_EXCLUDED_FRACTION:.0%})")
    if n_bad:
        log.warning("%d of %d bootstrap replicates excluded", n_bad, B)


def bootstrap_cost(regime: str, P: DiscreteMeasure, Qs: Sample, spec: CostSpec,
                   opts: SolveOptions | None = None, B: int = 1000, rng: RandomSource | None = None,
                   n: int | None = None) -> BootstrapResult:
    """Bootstrap law of ``rate * (T* - T_hat)``.

    ``one_sample_Q`` resamples the rows of ``Qs``; ``one_sample_P`` draws
    multinomial weights of size ``n`` from ``P``; ``two_sample`` does both
    and rescales by ``sqrt(n m / (n + m))``.  Replicate ``k`` uses the stream
    ``rng.spawn(k)``.
    """
    regime_lambda(regime, 0.5)
    if B < 1:
        raise ValueError("B must be >= 1")
    opts = opts or SolveOptions()
    rng = rng or RandomSource(0)
    m = Qs.size
    resample_p = regime in ("one_sample_P", "two_sample")
    resample_q = regime in ("one_sample_Q", "two_sample")
    if resample_p and n is None:
        raise ValueError(f"regime {regime} needs the size n of the sample behind P")
    ctx = _context(P, Qs, spec, opts, rng, resample_p, resample_q, n)
    base = _solve_problem(SemiDual(ctx["p"], ctx["C"], ctx["w"]), opts)
    if not base.converged:
        raise BootstrapError("the point estimate did not converge")
    rate = {"one_sample_P": math.sqrt(n or 1), "one_sample_Q": math.sqrt(m),
            "two_sample": math.sqrt((n or 1) * m / ((n or 1) + m))}[regime]
    vals = parallel_map(_cost_replicate, range(B), ctx)
    good = np.array([v for v in vals if v is not None])
    _check_excluded(B - len(good), B)
    return BootstrapResult(rate * (good - base.cost_value), rate, base.cost_value,
                           B - len(good), regime)


def bootstrap_potentials(P: DiscreteMeasure, Qs: Sample, spec: CostSpec,
                         opts: SolveOptions | None = None, B: int = 1000,
                         rng: RandomSource | None = None, resample: str = "P",
                         n: int | None = None) -> np.ndarray:
    """``B`` draws of ``sqrt(rate) * (z* - z_hat)`` in the mean-zero gauge.

    ``resample="P"`` draws multinomial weights of size ``n`` on the atoms
    (rate ``n``); ``resample="Q"`` resamples the rows of ``Qs`` (rate ``m``).
    """
    if resample not in ("P", "Q"):
        raise ValueError("resample must be 'P' or 'Q'")
    opts = opts or SolveOptions()
    rng = rng or RandomSource(0)
    if resample == "P" and n is None:
        raise ValueError("resampling P needs its sample size n")
    rate = n if resample == "P" else Qs.size
    ctx = _context(P, Qs, spec, opts, rng, resample == "P", resample == "Q", n)
    base = _solve_problem(SemiDual(ctx["p"], ctx["C"], ctx["w"]), opts)
    if not base.converged:
        raise BootstrapError("the point estimate did not converge")
    z0 = to_gauge(base.potential.z, "mean_zero")
    vals = parallel_map(_potential_replicate, range(B), ctx)
    good = [v for v in vals if v is not None]
    _check_excluded(B - len(good), B)
    draws = math.sqrt(rate) * (np.array(good) - z0)
    return draws - draws.mean(axis=1, keepdims=True)


def _mc_replicate(ctx, r):
    Qs = sample_continuous(ctx["spec"], ctx["m"], ctx["rng"].spawn(r))
    prob = _problem(ctx["P"], Qs, ctx["cost"])
    res = _solve_problem(prob, ctx["opts"])
    if not res.converged:
        return None
    f = prob.inner(to_gauge(res.potential.z, "raw"))
    fc = f - prob.w @ f
    return res.cost_value, max(float(prob.w @ (fc * fc)), 0.0)


def monte_carlo_costs(P: DiscreteMeasure, spec: ContinuousSpec, m: int, reps: int, cost: CostSpec,
                      opts: SolveOptions | None = None, rng: RandomSource | None = None):
    """Empirical costs over ``reps`` independent samples of size ``m`` from ``spec``.

    Returns ``(costs, variances)`` where ``variances[r]`` is the plug-in
    variance of ``f_z`` at the potential solved on replicate ``r``.
    """
    ctx = {"P": P, "spec": spec, "m": m, "cost": cost, "opts": opts or SolveOptions(),
           "rng": rng or RandomSource(0)}
    vals = parallel_map(_mc_replicate, range(reps), ctx)
    good = [v for v in vals if v is not None]
    _check_excluded(reps - len(good), reps)
    arr = np.array(good, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


# ---------------------------------------------------------------------------
# Hessian estimators
# ---------------------------------------------------------------------------

def _center(N: int) -> np.ndarray:
    return np.eye(N) - np.full((N, N), 1.0 / N)


def cell_diameter(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec) -> float:
    """Median over non-empty cells of the diagonal of the bounding box of their rows."""
    idx = _problem(P, Qs, spec).assign(_zvec(z))
    diams = []
    for i in np.unique(idx):
        pts = Qs.rows[idx == i]
        diams.append(float(np.sqrt(((pts.max(axis=0) - pts.min(axis=0)) ** 2).sum())))
    return float(np.median(diams))


def default_bandwidth(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec) -> float:
    """``0.5 * m^(-1/5)`` times the typical cell diameter."""
    return 0.5 * Qs.size ** (-0.2) * cell_diameter(P, Qs, z, spec)


def hessian_fd(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec, step: float | None = None,
               weights=None) -> np.ndarray:
    """Central differences of the dual gradient on the fixed sample.

    The result is symmetrised and projected so that every row sums to 0.
    """
    z = _zvec(z).copy()
    if step is None:
        step = default_bandwidth(P, Qs, z, spec)
    if not step > 0:
        raise ValueError("step must be positive")
    prob = _problem(P, Qs, spec, weights)
    N = len(z)
    H = np.empty((N, N))
    for j in range(N):
        e = np.zeros(N)
        e[j] = step
        # gradient p - masses, so the column is minus the change in masses
        H[:, j] = -(prob.masses(z + e) - prob.masses(z - e)) / (2.0 * step)
    if not np.any(H):
        raise ValueError(f"no sample point changes cell at step={step}; use a larger step")
    H = (H + H.T) / 2.0
    Pc = _center(N)
    return Pc @ H @ Pc


def hessian_band(P: DiscreteMeasure, Qs: Sample, z, spec: CostSpec, h: float | None = None,
                 weights=None) -> np.ndarray:
    """Slab estimator of the interface integrals.

    For each pair ``(i, j)`` the sample rows won by ``i`` or ``j`` that lie
    within distance ``h`` of the interface ``u_ij = 0`` (to first order,
    ``|u_ij| < h |grad u_ij|``) contribute ``1 / |grad u_ij|``; the average
    is divided by the slab width ``2h``.  The diagonal makes rows sum to 0.
    """
    z = _zvec(z)
    if h is None:
        h = default_bandwidth(P, Qs, z, spec)
    if not h > 0:
        raise ValueError("h must be positive")
    prob = _problem(P, Qs, spec, weights)
    N = len(z)
    R = prob.C - z[:, None]
    win = R.argmin(axis=0)
    grads = [grad_matrix(spec, x, Qs.rows) for x in P.points]
    H = np.zeros((N, N))
    skipped = 0
    for i in range(N):
        for j in range(i + 1, N):
            rows = np.flatnonzero((win == i) | (win == j))
            if len(rows) == 0:
                continue
            u = R[i, rows] - R[j, rows]
            gn = np.sqrt(((grads[i][rows] - grads[j][rows]) ** 2).sum(axis=1))
            # the slab test cannot be applied where the interface gradient vanishes
            skipped += int((gn == 0).sum())
            ok = (gn > 0) & (np.abs(u) < h * gn)
            H[i, j] = H[j, i] = float(prob.w[rows[ok]] @ (1.0 / gn[ok])) / (2.0 * h)
    if skipped:
        log.warning("hessian_band skipped %d rows with a vanishing interface gradient", skipped)
    H[np.diag_indices(N)] = -H.sum(axis=1)
    return H


# ---------------------------------------------------------------------------
# Sandwich covariance
# ---------------------------------------------------------------------------

def score_cov(p, masses) -> np.ndarray:
    """``A = sum_k p_k g_k g_k^T`` with ``g_k`` the mean-zero part of ``e_k - masses``."""
    p = np.asarray(p, float)
    masses = np.asarray(masses, float)
    N = len(p)
    # column k is the mean-zero part of e_k - masses
    G = _center(N) @ (np.eye(N) - masses[:, None])
    A = (G * p[None, :]) @ G.T
    return (A + A.T) / 2.0


def pinv_on_mean_zero(H, tol: float = 1e-8) -> np.ndarray:
    """Pseudo-inverse of a symmetric matrix restricted to the mean-zero subspace."""
    N = H.shape[0]
    Pc = _center(N)
    Hs = Pc @ ((H + H.T) / 2.0) @ Pc
    vals, vecs = np.linalg.eigh(Hs)
    ones = np.full(N, 1.0 / math.sqrt(N))
    # drop the eigenvector closest to the constant direction
    null = int(np.argmax(np.abs(vecs.T @ ones)))
    keep = np.array([k for k in range(N) if k != null], dtype=int)
    if len(keep) and np.abs(vals[keep]).min() < tol:
        raise SingularHessianError(
            "Hessian is singular on the mean-zero subspace (smallest eigenvalue "
            f"{np.abs(vals[keep]).min():.3g}); the dual is not strictly concave there, "
            "so the optimal potential is not locally unique")
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return (inv + inv.T) / 2.0


@dataclass
class PotentialClt:
    z_tilde: np.ndarray
    hessian: np.ndarray
    score_cov: np.ndarray
    sandwich: np.ndarray
    cost_value: float = float("nan")

    def band_quantile(self, alpha: float, n: int, draws: int = 100_000,
                      rng: RandomSource | None = None) -> float:
        """Half-width ``Delta_alpha / sqrt(n)`` of the uniform band."""
        return band_quantile(self, alpha, draws, rng or RandomSource(0)) / math.sqrt(n)

    def to_json(self) -> dict:
        return {"z_tilde": self.z_tilde.tolist(), "hessian": self.hessian.tolist(),
                "score_cov": self.score_cov.tolist(), "sandwich": self.sandwich.tolist(),
                "cost_value": self.cost_value}


def sandwich(H, A) -> np.ndarray:
    Hp = pinv_on_mean_zero(H)
    S = Hp @ A @ Hp
    return (S + S.T) / 2.0


def potential_clt(P: DiscreteMeasure, Qs: Sample, spec: CostSpec, opts: SolveOptions | None = None,
                  estimator: str = "band", h: float | None = None) -> PotentialClt:
    """Limit covariance of ``sqrt(n) (z_n - z)`` for potentials estimated from ``P_n``.

    ``Qs`` stands in for ``Q``.  The Hessian comes from :func:`hessian_band`
    (default) or :func:`hessian_fd`.
    """
    res: DualSolveResult = _solve_problem(_problem(P, Qs, spec), opts or SolveOptions())
    if not res.converged:
        raise RuntimeError("dual solve did not converge")
    z = to_gauge(res.potential.z, "mean_zero")
    if estimator == "band":
        H = hessian_band(P, Qs, z, spec, h)
    elif estimator == "fd":
        H = hessian_fd(P, Qs, z, spec, h)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    A = score_cov(P.weights, res.cell_masses)
    return PotentialClt(z, H, A, sandwich(H, A), res.cost_value)


def band_quantile(pclt, alpha: float, draws: int = 100_000, rng: RandomSource | None = None) -> float:
    """``1 - alpha`` quantile of ``max_i |N_i|`` for ``N ~ N(0, Sigma)``.

    ``pclt`` is a :class:`PotentialClt` or a covariance matrix.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0,1)")
    S = pclt.sandwich if isinstance(pclt, PotentialClt) else np.asarray(pclt, float)
    vals, vecs = np.linalg.eigh((S + S.T) / 2.0)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    gen = (rng or RandomSource(0)).generator()
    g = gen.standard_normal((draws, S.shape[0])) @ root.T
    return float(np.quantile(np.abs(g).max(axis=1), 1.0 - alpha))


__all__ = [
    "BootstrapError", "BootstrapResult", "PotentialClt", "SingularHessianError",
    "band_quantile", "bootstrap_cost", "bootstrap_potentials", "cell_diameter",
    "default_bandwidth", "hessian_band", "hessian_fd", "monte_carlo_costs", "pinv_on_mean_zero", "potential_clt",
    "sandwich", "score_cov",
]
