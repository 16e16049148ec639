"""Discrete and continuous probability measures, samples and seeded sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class RandomSource:
    """Deterministic random stream identified by a master seed and a stream key.

    Child streams obtained through :meth:`spawn` are statistically independent
    of each other and of their parent, so replicate ``k`` of a Monte-Carlo or
    bootstrap loop draws the same numbers whatever worker executes it.
    """

    master_seed: int
    stream_id: int | tuple = 0

    def _key(self) -> tuple:
        if isinstance(self.stream_id, tuple):
            return self.stream_id
        return (int(self.stream_id),)

    def spawn(self, k: int) -> "RandomSource":
        return RandomSource(self.master_seed, self._key() + (int(k),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed) % 2**64, spawn_key=self._key())
        return np.random.Generator(np.random.PCG64(seq))


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("points must be a list of coordinate vectors")
    return arr


@dataclass(frozen=True)
class DiscreteMeasure:
    """A probability on ``N`` distinct atoms of R^d.

    ``empirical=True`` relaxes the positivity of the weights: an empirical
    measure built from multinomial counts may put zero mass on some atoms.
    """

    points: np.ndarray
    weights: np.ndarray
    empirical: bool = False

    def __post_init__(self):
        pts = _as_points(self.points)
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if pts.shape[0] == 0:
            raise ValueError("a discrete measure needs at least one atom")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise ValueError("points and weights must be finite")
        if self.empirical:
            if np.any(w < 0):
                raise ValueError("weights must be nonnegative")
        elif np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        if abs(math.fsum(w) - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("atoms must be pairwise distinct")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def n_atoms(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def support(self) -> np.ndarray:
        """Indices of the atoms carrying positive mass."""
        return np.flatnonzero(self.weights > 0)

    def restrict(self) -> "DiscreteMeasure":
        """The same measure with zero-weight atoms dropped."""
        keep = self.support()
        if len(keep) == self.n_atoms:
            return DiscreteMeasure(self.points, self.weights)
        return DiscreteMeasure(self.points[keep], self.weights[keep] / math.fsum(self.weights[keep]))

    def diameter(self) -> float:
        diff = self.points[:, None, :] - self.points[None, :, :]
        return float(np.sqrt((diff**2).sum(-1)).max())

    def to_json(self) -> dict:
        return {"points": self.points.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "DiscreteMeasure":
        return cls(obj["points"], obj["weights"], bool(obj.get("empirical", False)))

    @classmethod
    def uniform(cls, points) -> "DiscreteMeasure":
        pts = _as_points(points)
        return cls(pts, exact_unit_weights(np.ones(len(pts))))


@dataclass(frozen=True)
class Sample:
    """``m`` observations in R^d, one per row."""

    rows: np.ndarray

    def __post_init__(self):
        rows = _as_points(self.rows)
        if rows.shape[0] < 1:
            raise ValueError("a sample needs at least one row")
        if not np.all(np.isfinite(rows)):
            raise ValueError("sample rows must be finite")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def as_discrete(self) -> DiscreteMeasure:
        """The empirical measure of the sample (repeated rows are merged)."""
        pts, counts = np.unique(self.rows, axis=0, return_counts=True)
        return DiscreteMeasure(pts, exact_unit_weights(counts))

    def to_json(self) -> dict:
        return {"rows": self.rows.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Sample":
        return cls(obj["rows"])


def exact_unit_weights(counts) -> np.ndarray:
    """``counts / counts.sum()`` nudged so the compensated sum is exactly 1."""
    counts = np.asarray(counts, dtype=float)
    w = counts / counts.sum()
    top = int(np.argmax(w))
    for _ in range(8):
        s = math.fsum(w)
        if s == 1.0:
            break
        w[top] = np.nextafter(w[top], -np.inf if s > 1.0 else np.inf)
    return w


def sample_discrete(P: DiscreteMeasure, n: int, rng: RandomSource) -> DiscreteMeasure:
    """Empirical measure of ``n`` i.i.d. draws from ``P``, kept on P's atoms."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts = rng.generator().multinomial(n, P.weights)
    return DiscreteMeasure(P.points, exact_unit_weights(counts), empirical=True)


# ---------------------------------------------------------------------------
# Continuous laws
# ---------------------------------------------------------------------------

_AXIS_KINDS = ("uniform", "normal")


@dataclass(frozen=True, eq=False)
class ContinuousSpec:
    """A continuous law on R^d.

    ``kind`` is ``"product"`` (independent axes, each ``("uniform", lo, hi)``
    or ``("normal", mean, sd)``) or ``"cube_mixture"`` (equal-weight mixture
    of uniforms on the cubes ``center + (-half_width, half_width)^d``).
    """

    kind: str
    axes: tuple = ()
    centers: np.ndarray | None = None
    half_width: float = 0.0
    _label: str = field(default="", compare=False)

    def __post_init__(self):
        if self.kind == "product":
            if not self.axes:
                raise ValueError("product spec needs at least one axis")
            for ax in self.axes:
                if ax[0] not in _AXIS_KINDS:
                    raise ValueError(f"unsupported axis kind {ax[0]!r}")
                if ax[0] == "uniform" and not ax[1] < ax[2]:
                    raise ValueError("uniform axis needs lo < hi")
                if ax[0] == "normal" and not ax[2] > 0:
                    raise ValueError("normal axis needs sd > 0")
        elif self.kind == "cube_mixture":
            if self.half_width <= 0:
                raise ValueError("half_width must be positive")
            c = _as_points(self.centers)
            c.setflags(write=False)
            object.__setattr__(self, "centers", c)
        else:
            raise ValueError(f"unsupported spec kind {self.kind!r}")

    def __eq__(self, other):
        return isinstance(other, ContinuousSpec) and self.to_json() == other.to_json()

    def __hash__(self):
        return hash(repr(self.to_json()))

    @property
    def dim(self) -> int:
        return len(self.axes) if self.kind == "product" else self.centers.shape[1]

    @classmethod
    def uniform_box(cls, lo, hi) -> "ContinuousSpec":
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        return cls("product", tuple(("uniform", float(a), float(b)) for a, b in zip(lo, hi)),
                   _label="uniform_box")

    @classmethod
    def gauss_product(cls, means, sds) -> "ContinuousSpec":
        means, sds = np.atleast_1d(means), np.atleast_1d(sds)
        return cls("product", tuple(("normal", float(a), float(b)) for a, b in zip(means, sds)),
                   _label="gauss_product")

    @classmethod
    def product(cls, axes) -> "ContinuousSpec":
        return cls("product", tuple((str(a[0]), float(a[1]), float(a[2])) for a in axes))

    @classmethod
    def cube_mixture(cls, centers, half_width: float) -> "ContinuousSpec":
        return cls("cube_mixture", centers=np.asarray(centers, float), half_width=float(half_width))

    def support_connected(self) -> bool:
        """Whether the support is connected (cubes touching or overlapping chain up)."""
        if self.kind == "product":
            return True
        c = self.centers
        gap = np.abs(c[:, None, :] - c[None, :, :]).max(-1)
        adj = gap <= 2 * self.half_width
        seen, stack = {0}, [0]
        while stack:
            i = stack.pop()
            for j in np.flatnonzero(adj[i]):
                if j not in seen:
                    seen.add(int(j))
                    stack.append(int(j))
        return len(seen) == len(c)

    def to_json(self) -> dict:
        if self.kind == "product":
            return {"kind": "product", "axes": [list(a) for a in self.axes]}
        return {"kind": "cube_mixture", "centers": self.centers.tolist(),
                "half_width": self.half_width}

    @classmethod
    def from_json(cls, obj: dict) -> "ContinuousSpec":
        kind = obj.get("kind")
        if kind == "uniform_box":
            return cls.uniform_box(obj["lo"], obj["hi"])
        if kind == "gauss_product":
            return cls.gauss_product(obj["means"], obj["sds"])
        if kind == "product":
            return cls.product(obj["axes"])
        if kind == "cube_mixture":
            return cls.cube_mixture(obj["centers"], obj["half_width"])
        raise ValueError(f"unsupported spec kind {kind!r}")


def sample_continuous(spec: ContinuousSpec, m: int, rng: RandomSource) -> Sample:
    """``m`` i.i.d. draws from ``spec``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    gen = rng.generator()
    if spec.kind == "product":
        cols = []
        for kind, a, b in spec.axes:
            if kind == "uniform":
                cols.append(gen.uniform(a, b, size=m))
            else:
                cols.append(gen.normal(a, b, size=m))
        return Sample(np.column_stack(cols))
    if spec.kind == "cube_mixture":
        comp = gen.integers(0, len(spec.centers), size=m)
        h = spec.half_width
        offsets = gen.uniform(-h, h, size=(m, spec.dim))
        return Sample(spec.centers[comp] + offsets)
    raise ValueError(f"unsupported spec kind {spec.kind!r}")


def second_moment(source) -> float:
    """E|Y|^2: analytic for a :class:`ContinuousSpec`, plug-in for a sample."""
    if isinstance(source, Sample):
        return float(np.mean((source.rows**2).sum(axis=1)))
    if isinstance(source, ContinuousSpec):
        if source.kind == "product":
            total = 0.0
            for kind, a, b in source.axes:
                total += (a * a + a * b + b * b) / 3.0 if kind == "uniform" else a * a + b * b
            return total
        c2 = (source.centers**2).sum(axis=1).mean()
        return float(c2 + source.dim * source.half_width**2 / 3.0)
    raise TypeError(f"cannot compute a second moment of {type(source).__name__}")


AXIS_ATOMS = np.array([
    [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0],
    [0.0, 0.0, 0.0],
])


def axis_atoms() -> DiscreteMeasure:
    """Equal weights on the origin and the six unit axis vectors of R^3."""
    return DiscreteMeasure.uniform(AXIS_ATOMS)


def uniform_normal_law() -> ContinuousSpec:
    """U(-1, 1) x N(0, 1) x N(0, 1)."""
    return ContinuousSpec.product([("uniform", -1, 1), ("normal", 0, 1), ("normal", 0, 1)])


def atom_cube_mixture() -> ContinuousSpec:
    """Uniform mixture on the cubes of half-width 0.1 around the seven atoms."""
    return ContinuousSpec.cube_mixture(AXIS_ATOMS, 0.1)
