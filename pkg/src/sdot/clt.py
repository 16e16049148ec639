"""Limit laws for the empirical transport cost.

Covers the multinomial covariance of empirical weights, plug-in variances of
the optimal inf-convolution under ``Q``, the three sampling regimes, the
sup-of-Gaussians limit over a finite candidate set of potentials and the
delta method for ``W_p = T^(1/p)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cost import CostSpec
from .measures import DiscreteMeasure, RandomSource, Sample
from .semidual import Potential, _problem, _zvec

REGIMES = ("one_sample_P", "one_sample_Q", "two_sample")


@dataclass(frozen=True)
class MultinomialCov:
    """``diag(p) - p p^T``, the covariance of one multinomial draw over the atoms."""

    matrix: np.ndarray

    def to_json(self) -> dict:
        return {"matrix": self.matrix.tolist()}


def sigma_p(p) -> MultinomialCov:
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0) or abs(math.fsum(p) - 1.0) > 1e-12:
        raise ValueError("p must be a probability vector")
    return MultinomialCov(np.diag(p) - np.outer(p, p))


def sigma_P_var(p, z) -> float:
    """``z^T Sigma(p) z``, the variance of ``sum_i z_i X_i``."""
    z = _zvec(z)
    p = np.asarray(p, dtype=float)
    if len(z) != len(p):
        raise ValueError("potential and weights differ in length")
    # written as a weighted variance so that z + c gives the same number
    zc = z - p @ z
    return float(p @ (zc * zc))


def _inner_values(Qs, P, z, spec, weights=None):
    prob = _problem(P, Qs, spec, weights)
    return prob.inner(_zvec(z)), prob.w


def _weighted_cov(a, b, w) -> float:
    ac = a - w @ a
    bc = b - w @ b
    return float(w @ (ac * bc))


def sigma_Q_var(Qs: Sample, P: DiscreteMeasure, z, spec: CostSpec, weights=None) -> float:
    """Plug-in variance of ``f_z(Y) = min_i {c(x_i, Y) - z_i}`` over the sample."""
    f, w = _inner_values(Qs, P, z, spec, weights)
    return max(_weighted_cov(f, f, w), 0.0)


def xi_cov(Qs: Sample, P: DiscreteMeasure, z, s, spec: CostSpec, weights=None) -> float:
    """Plug-in covariance of ``f_z(Y)`` and ``f_s(Y)``."""
    prob = _problem(P, Qs, spec, weights)
    fz, fs = prob.inner(_zvec(z)), prob.inner(_zvec(s))
    if np.array_equal(_zvec(z), _zvec(s)):
        return max(_weighted_cov(fz, fz, prob.w), 0.0)
    return _weighted_cov(fz, fs, prob.w)


def psd_clip(M) -> np.ndarray:
    """Symmetrise and set negative eigenvalues to zero."""
    M = np.asarray(M, dtype=float)
    M = (M + M.T) / 2.0
    vals, vecs = np.linalg.eigh(M)
    if vals.min(initial=0.0) >= 0.0:
        return M
    out = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    return (out + out.T) / 2.0


@dataclass(frozen=True)
class GaussianProcessCov:
    """Finite-dimensional covariance of the limit over candidate potentials.

    ``xi[a, b]`` is the plug-in covariance of ``f_{z_a}(Y)`` and ``f_{z_b}(Y)``;
    ``sig[a, b] = z_a^T Sigma(p) z_b``.
    """

    xi: np.ndarray
    sig: np.ndarray

    def __post_init__(self):
        xi = np.asarray(self.xi, float)
        sig = np.asarray(self.sig, float)
        if xi.shape != sig.shape or xi.ndim != 2 or xi.shape[0] != xi.shape[1]:
            raise ValueError("xi and sig must be square matrices of equal size")
        object.__setattr__(self, "xi", psd_clip(xi))
        object.__setattr__(self, "sig", psd_clip(sig))

    @property
    def k(self) -> int:
        return self.xi.shape[0]

    def joint(self, lam: float) -> np.ndarray:
        return psd_clip(lam * self.sig + (1.0 - lam) * self.xi)

    def to_json(self) -> dict:
        return {"xi": self.xi.tolist(), "sig": self.sig.tolist()}


def gaussian_process_cov(Qs: Sample, P: DiscreteMeasure, candidates, spec: CostSpec,
                         weights=None) -> GaussianProcessCov:
    prob = _problem(P, Qs, spec, weights)
    Z = np.array([_zvec(c) for c in candidates])
    F = np.array([prob.inner(z) for z in Z])
    Fc = F - (F @ prob.w)[:, None]
    xi = (Fc * prob.w) @ Fc.T
    S = sigma_p(P.weights).matrix
    return GaussianProcessCov(xi, Z @ S @ Z.T)


@dataclass
class CltLimit:
    """Weak limit of the rescaled cost in one of the three regimes.

    With a single potential the limit is ``N(0, variance)``; otherwise it is
    the maximum of a centred Gaussian vector indexed by ``candidates`` with
    covariance ``gp.joint(lam)``.
    """

    regime: str
    variance: float | None = None
    candidates: list = field(default_factory=list)
    gp: GaussianProcessCov | None = None
    lam: float | None = None
    rate: float | None = None

    def to_json(self) -> dict:
        return {
            "regime": self.regime,
            "lambda": self.lam,
            "variance": self.variance,
            "rate": self.rate,
            "candidates": [c.to_json() if isinstance(c, Potential) else list(c) for c in self.candidates],
            "gp": None if self.gp is None else self.gp.to_json(),
        }


def regime_lambda(regime: str, lam=None) -> float:
    """Weight of the ``P`` fluctuation: 1, 0, or ``lam`` for two samples."""
    if regime == "one_sample_P":
        return 1.0
    if regime == "one_sample_Q":
        return 0.0
    if regime == "two_sample":
        if lam is None or not 0.0 < lam < 1.0:
            raise ValueError("lambda must be in (0,1)")
        return float(lam)
    raise ValueError(f"unknown regime {regime!r}")


def regime_rate(regime: str, n=None, m=None) -> float | None:
    if regime == "one_sample_P":
        return None if n is None else math.sqrt(n)
    if regime == "one_sample_Q":
        return None if m is None else math.sqrt(m)
    if n is None or m is None:
        return None
    return math.sqrt(n * m / (n + m))


def limit_variance(regime: str, p, Qs: Sample, P: DiscreteMeasure, z, spec: CostSpec,
                   lam=None, n=None, m=None) -> CltLimit:
    """Gaussian limit of the cost when the optimal potential is unique.

    ``lam`` is the two-sample proportion ``m / (n + m)``; ``n`` and ``m``
    only fill in the normalising rate.
    """
    w = regime_lambda(regime, lam)
    p = P.weights if p is None else p
    vp = sigma_P_var(p, z) if w > 0 else 0.0
    vq = sigma_Q_var(Qs, P, z, spec) if w < 1 else 0.0
    var = w * vp + (1.0 - w) * vq
    if m is None and Qs is not None:
        m = Qs.size
    pot = z if isinstance(z, Potential) else Potential(z, "raw")
    return CltLimit(regime, var, [pot], None, lam if regime == "two_sample" else None,
                    regime_rate(regime, n, m))


def sup_limit_sampler(candidates, gp: GaussianProcessCov, lam: float, n_draws: int,
                      rng: RandomSource) -> np.ndarray:
    """Draws of ``max_a G_a`` with ``G ~ N(0, lam * sig + (1 - lam) * xi)``.

    ``lam`` may be 0 or 1 for the one-sample regimes.
    """
    if len(candidates) != gp.k:
        raise ValueError(f"{len(candidates)} candidates but a {gp.k}x{gp.k} covariance")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lam must be in [0, 1]")
    cov = gp.joint(lam)
    vals, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    g = rng.generator().standard_normal((n_draws, gp.k)) @ root.T
    return g.max(axis=1)


@dataclass(frozen=True)
class WassersteinLimit:
    """Delta-method image of a cost limit under ``T -> T^(1/p)``.

    When ``T = 0`` the limit is not Gaussian: draws of the cost limit are
    mapped through ``t -> max(t, 0)^(1/p)`` and the rate becomes
    ``n^(1/(2p))``.
    """

    w_value: float
    w_variance: float | None
    p: float
    rate: float | None
    degenerate: bool

    def transform(self, draws) -> np.ndarray:
        d = np.asarray(draws, dtype=float)
        if self.degenerate:
            return np.maximum(d, 0.0) ** (1.0 / self.p)
        return d / (self.p * self.w_value ** (self.p - 1.0))

    def to_json(self) -> dict:
        return {"w_value": self.w_value, "w_variance": self.w_variance, "p": self.p,
                "rate": self.rate, "degenerate": self.degenerate}


def wasserstein_delta(T: float, varT: float, p: float, rate_n=None) -> WassersteinLimit:
    """Limit of ``W_p`` from the limit variance ``varT`` of ``T = W_p^p``.

    ``rate_n`` is the effective sample size ``n`` (the cost rate being
    ``sqrt(n)``).
    """
    if not p >= 1:
        raise ValueError("p must be >= 1")
    if T < 0 or varT < 0:
        raise ValueError("T and varT must be nonnegative")
    if T == 0:
        rate = None if rate_n is None else rate_n ** (1.0 / (2.0 * p))
        return WassersteinLimit(0.0, None, float(p), rate, True)
    W = T ** (1.0 / p)
    rate = None if rate_n is None else math.sqrt(rate_n)
    return WassersteinLimit(W, varT / (p * W ** (p - 1.0)) ** 2, float(p), rate, False)
