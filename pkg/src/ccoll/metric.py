"""Points, norms, distances and the approximation factor.

All geometry in the package runs through this module: coordinates are
64-bit floats, norms are either an lp family member or a user-supplied
black box with declared equivalence constants against the sup norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InputError, ParameterError

# Relative slack used for every comparison against a derived bound.
REL_TOL = 1e-9


@dataclass(frozen=True)
class NormSpec:
    """A vector norm: lp with exponent p, or a black box with constants.

    For every x the constants must satisfy
    ``c_low * ||x||_inf <= ||x|| <= c_high * ||x||_inf``; for lp they are
    the analytic values c_low=1, c_high=d**(1/p) and depend on the
    dimension, so lp specs store the exponent only and the constants are
    computed on demand.
    """

    kind: str  # "lp" | "blackbox"
    p: float = 2.0
    func: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    c_low: float = 1.0
    c_high: float = float("nan")

    @staticmethod
    def lp(p: float) -> "NormSpec":
        if not (p >= 1.0):
            raise ParameterError(f"lp norm needs p >= 1, got {p}")
        return NormSpec(kind="lp", p=float(p))

    @staticmethod
    def l1() -> "NormSpec":
        return NormSpec.lp(1.0)

    @staticmethod
    def l2() -> "NormSpec":
        return NormSpec.lp(2.0)

    @staticmethod
    def linf() -> "NormSpec":
        return NormSpec.lp(math.inf)

    @staticmethod
    def black_box(
        func: Callable[[np.ndarray], np.ndarray],
        c_low: float,
        c_high: float,
        dim: int,
        samples: int = 512,
        seed: int = 0,
    ) -> "NormSpec":
        """Wrap a norm oracle, validating the declared equivalence constants.

        ``func`` must accept an array of shape (..., dim) and return the
        norms with shape (...).  Validation draws random vectors and
        rejects the spec if any sample violates
        c_low*||x||_inf <= func(x) <= c_high*||x||_inf beyond REL_TOL.
        """
        if not (0 < c_low <= c_high):
            raise ParameterError("need 0 < c_low <= c_high")
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((samples, dim))
        v = np.concatenate([v, np.eye(dim), -np.eye(dim)])
        got = np.asarray(func(v), dtype=float)
        sup = np.abs(v).max(axis=1)
        if np.any(got < c_low * sup * (1 - REL_TOL)) or np.any(got > c_high * sup * (1 + REL_TOL)):
            raise ParameterError("black-box norm violates declared equivalence constants")
        return NormSpec(kind="blackbox", p=math.nan, func=func, c_low=c_low, c_high=c_high)

    def constants(self, dim: int) -> tuple[float, float]:
        """(c_low, c_high) versus the sup norm in the given dimension."""
        if self.kind == "lp":
            if math.isinf(self.p):
                return 1.0, 1.0
            return 1.0, dim ** (1.0 / self.p)
        return self.c_low, self.c_high

    def tag(self) -> str:
        if self.kind == "blackbox":
            return "blackbox"
        if math.isinf(self.p):
            return "linf"
        if self.p == 1.0:
            return "l1"
        if self.p == 2.0:
            return "l2"
        return f"lp:{self.p:g}"


def norms(vecs: np.ndarray, spec: NormSpec) -> np.ndarray:
    """Norms of an array of vectors with shape (..., d)."""
    v = np.asarray(vecs, dtype=float)
    if spec.kind == "blackbox":
        return np.asarray(spec.func(v), dtype=float)
    if math.isinf(spec.p):
        return np.abs(v).max(axis=-1)
    if spec.p == 1.0:
        return np.abs(v).sum(axis=-1)
    if spec.p == 2.0:
        return np.sqrt((v * v).sum(axis=-1))
    return (np.abs(v) ** spec.p).sum(axis=-1) ** (1.0 / spec.p)


def distance(a: Sequence[float], b: Sequence[float], spec: NormSpec) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(norms(a - b, spec))


class PointSet:
    """An immutable finite point set with multiplicities.

    Exact coordinate duplicates are merged at construction; the stored
    points are pairwise distinct, in order of first occurrence.
    """

    __slots__ = ("coords", "multiplicities")

    def __init__(self, coords: np.ndarray, multiplicities: np.ndarray):
        self.coords = coords
        self.multiplicities = multiplicities

    @staticmethod
    def from_coords(raw) -> "PointSet":
        arr = np.asarray(raw, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InputError("point set needs at least one point with fixed dimension")
        if not np.all(np.isfinite(arr)):
            raise InputError("point coordinates must be finite")
        seen: dict[bytes, int] = {}
        keep: list[int] = []
        mult: list[int] = []
        for i in range(arr.shape[0]):
            key = arr[i].tobytes()
            j = seen.get(key)
            if j is None:
                seen[key] = len(keep)
                keep.append(i)
                mult.append(1)
            else:
                mult[j] += 1
        coords = np.ascontiguousarray(arr[keep])
        coords.setflags(write=False)
        mults = np.asarray(mult, dtype=np.int64)
        mults.setflags(write=False)
        return PointSet(coords, mults)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def total_weight(self) -> int:
        return int(self.multiplicities.sum())

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.coords.min(axis=0), self.coords.max(axis=0)

    def __repr__(self) -> str:
        return f"PointSet(n={self.n}, dim={self.dim})"


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        if self.radius < 0:
            raise ParameterError("ball radius must be nonnegative")

    def contains(self, point, spec: NormSpec, rel_tol: float = REL_TOL) -> bool:
        return distance(self.center, point, spec) <= self.radius * (1 + rel_tol)


def _as_points(X) -> np.ndarray:
    if isinstance(X, PointSet):
        return X.coords
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    return arr


def set_diameter(A, spec: NormSpec) -> float:
    """Maximum pairwise distance within A (brute force)."""
    pts = _as_points(A)
    if pts.shape[0] == 0:
        raise InputError("diameter of an empty set")
    if pts.shape[0] == 1:
        return 0.0
    diffs = pts[:, None, :] - pts[None, :, :]
    return float(norms(diffs, spec).max())


def set_distance(A, B, spec: NormSpec) -> float:
    """Minimum cross distance between nonempty A and B (brute force)."""
    a = _as_points(A)
    b = _as_points(B)
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise InputError("set distance needs nonempty sets")
    diffs = a[:, None, :] - b[None, :, :]
    return float(norms(diffs, spec).min())


def point_to_set_distances(p, X, spec: NormSpec) -> np.ndarray:
    pts = _as_points(X)
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != pts.shape[1]:
        raise InputError(f"dimension mismatch: point has {p.shape[-1]}, set has {pts.shape[1]}")
    return norms(pts - p, spec)


def approximation_factor(p, q, X, spec: NormSpec) -> float:
    """max over x in X of dist(x,q)/dist(x,p), with 0/0 = 1 and y/0 = inf.

    Ratios are computed as dq * (1/dp) so that every best-factor code
    path in the package produces bit-identical values.
    """
    dp = point_to_set_distances(p, X, spec)
    dq = point_to_set_distances(q, X, spec)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = dq * (1.0 / dp)
    ratio[(dp == 0) & (dq == 0)] = 1.0
    ratio[(dp == 0) & (dq > 0)] = np.inf
    return float(ratio.max())


def nearest_input(p, X, spec: NormSpec) -> tuple[int, float]:
    """Index and distance of an element of X nearest to p; ties go to the lowest index."""
    d = point_to_set_distances(p, X, spec)
    i = int(d.argmin())  # argmin returns the first minimum, i.e. lowest index
    return i, float(d[i])
