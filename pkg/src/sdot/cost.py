"""Power costs c(x, y) = |x - y|^p and their gradients in y."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SingularGradientError(ValueError):
    """The cost gradient does not exist at y = x for p < 2."""


@dataclass(frozen=True)
class CostSpec:
    p: float = 2.0

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"cost exponent must be >= 1, got {self.p}")

    @classmethod
    def euclidean(cls) -> "CostSpec":
        return cls(1.0)

    @classmethod
    def squared_euclidean(cls) -> "CostSpec":
        return cls(2.0)

    @classmethod
    def euclidean_power(cls, p: float) -> "CostSpec":
        return cls(float(p))

    @property
    def kind(self) -> str:
        if self.p == 1.0:
            return "euclidean"
        if self.p == 2.0:
            return "squared_euclidean"
        return "euclidean_power"

    def to_json(self) -> dict:
        return {"kind": "power", "p": self.p}

    @classmethod
    def from_json(cls, obj: dict) -> "CostSpec":
        kind = obj.get("kind", "power")
        if kind in ("power", "euclidean_power"):
            return cls(float(obj["p"]))
        if kind == "euclidean":
            return cls(1.0)
        if kind == "squared_euclidean":
            return cls(2.0)
        raise ValueError(f"unknown cost kind {kind!r}")


def _pair(x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def _power(sq: np.ndarray, p: float) -> np.ndarray:
    if p == 2.0:
        return sq
    if p == 1.0:
        return np.sqrt(sq)
    return sq ** (p / 2.0)


def cost(spec: CostSpec, x, y) -> float:
    x, y = _pair(x, y)
    return float(_power(np.sum((x - y) ** 2), spec.p))


def cost_grad_y(spec: CostSpec, x, y) -> np.ndarray:
    """p |x - y|^(p-2) (y - x)."""
    x, y = _pair(x, y)
    diff = y - x
    r = np.sqrt(np.sum(diff**2))
    if spec.p == 2.0:
        return 2.0 * diff
    if r == 0.0:
        if spec.p < 2.0:
            raise SingularGradientError("cost gradient is singular at y == x for p < 2")
        return np.zeros_like(diff)
    return spec.p * r ** (spec.p - 2.0) * diff


def cost_matrix(spec: CostSpec, points: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``C[i, j] = c(points[i], rows[j])`` as an ``(N, m)`` array.

    Coordinates are accumulated axis by axis rather than through a matrix
    product so results do not depend on the BLAS thread count.
    """
    points = np.asarray(points, dtype=float)
    rows = np.asarray(rows, dtype=float)
    if points.shape[1] != rows.shape[1]:
        raise ValueError(f"dimension mismatch: atoms in R^{points.shape[1]}, rows in R^{rows.shape[1]}")
    sq = np.zeros((points.shape[0], rows.shape[0]))
    for a in range(points.shape[1]):
        sq += (points[:, a, None] - rows[None, :, a]) ** 2
    return _power(sq, spec.p)


def grad_matrix(spec: CostSpec, point: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Row-wise gradients in y of ``c(point, y)``; zero where the gradient is singular."""
    diff = np.asarray(rows, float) - np.asarray(point, float)[None, :]
    if spec.p == 2.0:
        return 2.0 * diff
    r = np.sqrt((diff**2).sum(axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(r > 0, spec.p * r ** (spec.p - 2.0), 0.0)
    return scale[:, None] * diff
