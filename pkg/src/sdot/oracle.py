"""Exact reference solvers used as ground truth.

These deliberately avoid the machinery of :mod:`sdot.semidual`: 1-D distances
come from integrating distribution or quantile functions piece by piece, and
small discrete problems are solved by successive shortest augmenting paths.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PiecewiseCdf:
    """A 1-D distribution function that is affine between knots.

    On ``[knots[k], knots[k+1])`` the CDF equals
    ``values[k] + slopes[k] * (t - knots[k])``; it is 0 left of the first knot
    and the last piece must be flat at 1.
    """

    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, float)
        v = np.asarray(self.values, float)
        s = np.asarray(self.slopes, float)
        if not (k.shape == v.shape == s.shape) or k.ndim != 1 or len(k) == 0:
            raise ValueError("knots, values and slopes must be 1-D arrays of equal length")
        if np.any(np.diff(k) <= 0):
            raise ValueError("knots must be strictly increasing")
        ends = v[:-1] + s[:-1] * np.diff(k)
        if np.any(s < 0) or np.any(v < -1e-12) or np.any(v[1:] < ends - 1e-12):
            raise ValueError("CDF must be nondecreasing")
        if abs(v[-1] - 1.0) > 1e-12 or s[-1] != 0:
            raise ValueError("CDF must end flat at 1")
        object.__setattr__(self, "knots", k)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "slopes", s)

    def __call__(self, t):
        t = np.asarray(t, float)
        k = np.searchsorted(self.knots, t, side="right") - 1
        kk = np.clip(k, 0, None)
        out = self.values[kk] + self.slopes[kk] * (t - self.knots[kk])
        return np.where(k < 0, 0.0, out)

    def _slope_at(self, t):
        k = np.searchsorted(self.knots, t, side="right") - 1
        return np.where(k < 0, 0.0, self.slopes[np.clip(k, 0, None)])

    @classmethod
    def discrete(cls, points, weights=None) -> "PiecewiseCdf":
        x = np.asarray(points, float).ravel()
        w = np.full(len(x), 1.0 / len(x)) if weights is None else np.asarray(weights, float).ravel()
        order = np.argsort(x, kind="stable")
        x, w = x[order], w[order]
        ux, inv = np.unique(x, return_inverse=True)
        mass = np.bincount(inv, weights=w)
        vals = np.cumsum(mass)
        vals[-1] = 1.0
        return cls(ux, vals, np.zeros(len(ux)))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "PiecewiseCdf":
        return cls(np.array([lo, hi]), np.array([0.0, 1.0]), np.array([1.0 / (hi - lo), 0.0]))


def _abs_affine_integral(a, b, length):
    """Exact ``int_0^length |a + b s| ds`` for arrays of affine pieces."""
    a, b, length = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float), np.asarray(length, float))
    end = a + b * length
    out = np.abs(a + end) * length / 2.0
    cross = (a * end < 0) & (b != 0)
    # sign change: two triangles
    out = np.where(cross, (a * a + end * end) / (2.0 * np.abs(np.where(b == 0, 1.0, b))), out)
    return out


def w1_exact_1d(F: PiecewiseCdf, G: PiecewiseCdf) -> float:
    """``int |F(t) - G(t)| dt`` integrated exactly between merged knots."""
    t = np.union1d(F.knots, G.knots)
    if len(t) < 2:
        return 0.0
    left = t[:-1]
    a = F(left) - G(left)
    b = F._slope_at(left) - G._slope_at(left)
    return float(_abs_affine_integral(a, b, np.diff(t)).sum())


def _power_affine_integral(a, b, length, p):
    """Exact ``int_0^length |a + b s|^p ds`` for affine pieces."""
    end = a + b * length
    flat = np.abs(b) < 1e-300
    safe_b = np.where(flat, 1.0, b)
    # antiderivative of |a + b s|^p is sign(a + b s) |a + b s|^(p+1) / ((p+1) b)
    prim = lambda v: np.sign(v) * np.abs(v) ** (p + 1) / ((p + 1) * safe_b)
    return np.where(flat, np.abs(a) ** p * length, prim(end) - prim(a))


def wp_exact_1d(points, weights, Q, p: float) -> float:
    """``(int_0^1 |F_P^-1(u) - F_Q^-1(u)|^p du)^(1/p)`` for a discrete 1-D ``P``.

    ``Q`` is either a 1-D array of sample values (equal weights) or a tuple
    ``("uniform", lo, hi)``.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    x = np.asarray(points, float).ravel()
    w = np.asarray(weights, float).ravel()
    order = np.argsort(x, kind="stable")
    x, w = x[order], w[order]
    u_p = np.concatenate([[0.0], np.cumsum(w)])
    u_p[-1] = 1.0
    if isinstance(Q, tuple) and Q[0] == "uniform":
        lo, hi = float(Q[1]), float(Q[2])
        u = u_p
        qa = lo + (hi - lo) * u[:-1]
        qb = np.full(len(u) - 1, hi - lo)
    else:
        y = np.sort(np.asarray(Q, float).ravel())
        u_q = np.arange(len(y) + 1) / len(y)
        u = np.union1d(u_p, u_q)
        mid = (u[:-1] + u[1:]) / 2.0
        qa = y[np.minimum(np.searchsorted(u_q, mid, side="right") - 1, len(y) - 1)]
        qb = np.zeros(len(u) - 1)
    mid = (u[:-1] + u[1:]) / 2.0
    pa = x[np.minimum(np.searchsorted(u_p, mid, side="right") - 1, len(x) - 1)]
    lengths = np.diff(u)
    if isinstance(Q, tuple):
        a = pa - qa
        b = -qb
    else:
        a = pa - qa
        b = np.zeros_like(a)
    total = float(_power_affine_integral(a, b, lengths, p).sum())
    return max(total, 0.0) ** (1.0 / p)


def exact_lp_small(p, q, cost_matrix):
    """Exact discrete optimal transport by successive shortest augmenting paths.

    Shortest paths are found with Bellman-Ford on the residual bipartite graph
    (forward arcs cost ``C_ij``, backward arcs ``-C_ij`` where flow is
    positive); each augmentation saturates a supply, a demand or a backward
    arc.  Returns ``(value, plan, u, v)`` with optimal duals
    ``u_i + v_j <= C_ij``, tight on the support of ``plan``.
    """
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    C = np.asarray(cost_matrix, float)
    N, M = C.shape
    if N * M > 10_000:
        raise ValueError("exact_lp_small is limited to N*M <= 1e4")
    if np.any(p < 0) or np.any(q < 0) or abs(p.sum() - 1) > 1e-9 or abs(q.sum() - 1) > 1e-9:
        raise ValueError("weights must be nonnegative and sum to 1")
    tiny = 1e-14
    flow = np.zeros((N, M))
    supply, demand = p.copy(), q.copy()
    for _ in range(10 * (N + M) * (N + M)):
        if supply.max() <= tiny or demand.max() <= tiny:
            break
        d_s = np.where(supply > tiny, 0.0, np.inf)
        d_t = np.full(M, np.inf)
        pred_s = np.full(N, -1)
        pred_t = np.full(M, -1)
        for _ in range(N + M + 1):
            via = d_s[:, None] + C
            i_best = np.argmin(via, axis=0)
            new_t = via[i_best, np.arange(M)]
            upd_t = new_t < d_t - 1e-15
            d_t[upd_t], pred_t[upd_t] = new_t[upd_t], i_best[upd_t]
            back = np.where(flow > tiny, d_t[None, :] - C, np.inf)
            j_best = np.argmin(back, axis=1)
            new_s = back[np.arange(N), j_best]
            upd_s = new_s < d_s - 1e-15
            d_s[upd_s], pred_s[upd_s] = new_s[upd_s], j_best[upd_s]
            if not (upd_t.any() or upd_s.any()):
                break
        open_t = np.flatnonzero((demand > tiny) & np.isfinite(d_t))
        if len(open_t) == 0:
            raise RuntimeError("no augmenting path; weights malformed")
        jt = int(open_t[np.argmin(d_t[open_t])])
        forward, backward = [], []
        j = jt
        while True:
            i = int(pred_t[j])
            forward.append((i, j))
            if pred_s[i] < 0:
                break
            j = int(pred_s[i])
            backward.append((i, j))
        delta = min(supply[i], demand[jt], *(flow[a, b] for a, b in backward))
        for a, b in forward:
            flow[a, b] += delta
        for a, b in backward:
            flow[a, b] -= delta
        supply[i] -= delta
        demand[jt] -= delta
    value = float((flow * C).sum())
    u, v = _duals_from_plan(C, flow)
    return value, flow, u, v


def _duals_from_plan(C, flow):
    """Bellman-Ford potentials on the residual graph of an optimal plan."""
    N, M = C.shape
    # nodes 0..N-1 atoms, N..N+M-1 targets; all start at distance 0 (virtual root)
    d = np.zeros(N + M)
    pos = flow > 1e-15
    for _ in range(N + M + 1):
        changed = False
        # forward arcs i -> j with cost C_ij always residual
        cand = d[:N, None] + C
        new_t = np.minimum(d[N:], cand.min(axis=0))
        # backward arcs j -> i with cost -C_ij when flow > 0
        back = np.where(pos, d[None, N:] - C, np.inf)
        new_s = np.minimum(d[:N], back.min(axis=1))
        if np.any(new_t < d[N:] - 1e-13) or np.any(new_s < d[:N] - 1e-13):
            changed = True
        d[N:], d[:N] = new_t, new_s
        if not changed:
            break
    u = -d[:N]
    v = d[N:]
    return u, v
