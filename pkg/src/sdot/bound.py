"""Explicit bound on the mean error of the empirical W1 and the 1-D discretisation study."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .measures import DiscreteMeasure, RandomSource
from .oracle import PiecewiseCdf, w1_exact_1d
from .parallel import parallel_map


def k_const(P: DiscreteMeasure | float, q2: float) -> float:
    """``(6 diam + 2 sqrt(q2)) (log 2 + sqrt(2 diam + 1))``.

    ``P`` is a discrete measure or its diameter.  The first factor is kept as
    ``4 diam + 2 sqrt(q2) + 2 diam``, exactly as the bound is usually stated,
    even though the two diameter terms could be merged.
    """
    if q2 < 0:
        raise ValueError("second moment must be nonnegative")
    diam = P.diameter() if isinstance(P, DiscreteMeasure) else float(P)
    return (4.0 * diam + 2.0 * math.sqrt(q2) + 2.0 * diam) * (math.log(2.0) + math.sqrt(2.0 * diam + 1.0))


def bound_rhs(N: int, m: int, k: float) -> float:
    """``8 sqrt(2N) k / sqrt(m)``."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be >= 1")
    return 8.0 * math.sqrt(2.0 * N) * k / math.sqrt(m)


@dataclass
class BoundReport:
    N: int
    m: int
    diam: float
    second_moment: float
    k_const: float
    rhs: float
    empirical_error: float | None = None
    stderr: float | None = None

    def to_json(self) -> dict:
        return dict(self.__dict__)


def bound_report(P: DiscreteMeasure, m: int, q2: float, empirical_error=None) -> BoundReport:
    diam = P.diameter()
    k = k_const(diam, q2)
    return BoundReport(P.n_atoms, m, diam, q2, k, bound_rhs(P.n_atoms, m, k), empirical_error)


def grid_measure(N: int) -> DiscreteMeasure:
    """Equal weights on the cell centres ``(k + 1/2) / N`` of ``(0, 1)``."""
    return DiscreteMeasure.uniform((np.arange(N) + 0.5) / N)


def grid_w1_to_uniform(N: int) -> float:
    """Exact ``W1`` between :func:`grid_measure` and ``U(0, 1)``: ``1 / (4N)``."""
    return 1.0 / (4.0 * N)


def _error_replicate(ctx, r):
    y = ctx["rng"].spawn(r).generator().random(ctx["m"])
    G = PiecewiseCdf.discrete(y)
    out = []
    for N in ctx["N_list"]:
        F = PiecewiseCdf.discrete((np.arange(N) + 0.5) / N)
        out.append(abs(w1_exact_1d(F, G) - grid_w1_to_uniform(N)))
    return out


def mean_error_experiment(N_list, m: int, reps: int, rng: RandomSource) -> list[BoundReport]:
    """Monte-Carlo ``E|W1(P^N, U_m) - W1(P^N, U)|`` for each ``N``.

    ``P^N`` is :func:`grid_measure` and ``U = U(0, 1)``.  Replicate ``r``
    draws one sample ``U_m`` from ``rng.spawn(r)`` shared by all ``N``.
    """
    N_list = [int(N) for N in N_list]
    if reps < 1 or m < 1 or not N_list:
        raise ValueError("need reps >= 1, m >= 1 and at least one N")
    errs = np.array(parallel_map(_error_replicate, range(reps),
                                 {"rng": rng, "m": m, "N_list": N_list}))
    out = []
    for col, N in enumerate(N_list):
        e = errs[:, col]
        rep = bound_report(grid_measure(N), m, 1.0 / 3.0, float(e.mean()))
        rep.stderr = float(e.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("nan")
        out.append(rep)
    return out


def loglog_slope(N_list, errors) -> float:
    """Least-squares slope of ``log error`` against ``log N``."""
    return float(np.polyfit(np.log(np.asarray(N_list, float)), np.log(np.asarray(errors, float)), 1)[0])


def small_n_window(N_list, m: int) -> list[int]:
    """The grid values with ``N <= sqrt(m) / 2``.

    Beyond that point the error is dominated by ``W1(U_m, U)`` and stops
    growing with ``N``.
    """
    return [int(N) for N in N_list if N <= math.sqrt(m) / 2.0]
