"""Finite coverings of the unit ball by sigma-balls, as reusable templates.

Every construction here is an axis-parallel lattice intersected with a
norm ball, so a template is fully described by (spacing, origin,
integer lattice points).  That structure is what lets the verifier
reason about scaled/translated copies without materializing them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError
from .metric import REL_TOL, NormSpec, norms

__all__ = [
    "CoveringTemplate",
    "euclidean_grid",
    "linf_grid",
    "lp_grid",
    "blackbox_grid",
    "template_for",
    "scale_translate",
    "sample_unit_ball",
]


@dataclass(frozen=True)
class CoveringTemplate:
    """Centers covering B(0,1) at radius sigma: origin + spacing * k, k integer.

    ``centers`` rows are in lexicographic lattice order (last axis
    fastest); ``keys`` are the matching linearized lattice indices,
    ascending, so membership and rank queries are a searchsorted away.
    """

    centers: np.ndarray
    sigma: float
    norm: NormSpec
    construction: str
    spacing: float
    origin: float
    lattice: np.ndarray
    kmin: np.ndarray
    kdims: np.ndarray
    keys: np.ndarray

    @property
    def size(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def lattice_ranks(self, kvecs: np.ndarray) -> np.ndarray:
        """Row indices of integer lattice vectors, -1 where absent."""
        kvecs = np.atleast_2d(np.asarray(kvecs, dtype=np.int64))
        inside = np.all((kvecs >= self.kmin) & (kvecs < self.kmin + self.kdims), axis=1)
        keys = np.zeros(len(kvecs), dtype=np.int64)
        stride = 1
        for ax in range(self.dim - 1, -1, -1):
            keys += (kvecs[:, ax] - self.kmin[ax]) * stride
            stride *= int(self.kdims[ax])
        pos = np.searchsorted(self.keys, keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        hit = inside & (self.keys[pos_c] == keys)
        return np.where(hit, pos_c, -1)


def _finalize(kvecs: np.ndarray, spacing: float, origin: float, sigma: float,
              norm: NormSpec, construction: str) -> CoveringTemplate:
    centers = origin + spacing * kvecs.astype(float)
    kmin = kvecs.min(axis=0)
    kdims = kvecs.max(axis=0) - kmin + 1
    keys = np.zeros(len(kvecs), dtype=np.int64)
    stride = 1
    for ax in range(kvecs.shape[1] - 1, -1, -1):
        keys += (kvecs[:, ax] - kmin[ax]) * stride
        stride *= int(kdims[ax])
    for arr in (centers, kvecs, kmin, kdims, keys):
        arr.setflags(write=False)
    return CoveringTemplate(
        centers=centers, sigma=sigma, norm=norm, construction=construction,
        spacing=spacing, origin=float(origin), lattice=kvecs,
        kmin=kmin, kdims=kdims, keys=keys,
    )


def _check_args(d: int, sigma: float) -> None:
    if d < 1 or int(d) != d:
        raise ParameterError(f"dimension must be a positive integer, got {d}")
    if not (0.0 < sigma < 1.0):
        raise ParameterError(f"sigma must lie in (0,1), got {sigma}")


def _lattice_box(d: int, m: int) -> np.ndarray:
    """All integer vectors in [-m, m]^d, lexicographic order."""
    rng = np.arange(-m, m + 1, dtype=np.int64)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def euclidean_grid(d: int, sigma: float) -> CoveringTemplate:
    """Lattice (2*sigma/sqrt(d)) Z^d clipped to the l2 ball of radius 1+sigma.

    Each lattice cell has half-diagonal exactly sigma, so the covering
    is sound by construction.
    """
    _check_args(d, sigma)
    h = 2.0 * sigma / math.sqrt(d)
    m = int(math.floor((1.0 + sigma) / h))
    k = _lattice_box(d, m)
    keep = norms(h * k, NormSpec.l2()) <= (1.0 + sigma) * (1 + REL_TOL)
    return _finalize(k[keep], h, 0.0, sigma, NormSpec.l2(), "euclidean-grid")


def linf_grid(d: int, sigma: float) -> CoveringTemplate:
    """Centers of the uniform ceil(1/sigma)-fold subdivision of [-1,1]^d."""
    _check_args(d, sigma)
    mm = math.ceil(1.0 / sigma)
    h = 2.0 / mm
    rng = np.arange(0, mm, dtype=np.int64)
    grids = np.meshgrid(*([rng] * d), indexing="ij")
    k = np.stack([g.ravel() for g in grids], axis=1)
    return _finalize(k, h, -1.0 + h / 2.0, sigma, NormSpec.linf(), "linf-grid")


def lp_grid(d: int, p: float, sigma: float) -> CoveringTemplate:
    """Axis-parallel grid with spacing 2*sigma/d**(1/p), clipped to the lp ball.

    An lp cell of side h has half-diameter (h/2)*d**(1/p), which equals
    sigma for this spacing.
    """
    _check_args(d, sigma)
    if not (1.0 <= p < math.inf):
        raise ParameterError(f"lp grid needs 1 <= p < inf, got {p}")
    spec = NormSpec.lp(p)
    h = 2.0 * sigma / d ** (1.0 / p)
    m = int(math.floor((1.0 + sigma) / h))
    k = _lattice_box(d, m)
    keep = norms(h * k, spec) <= (1.0 + sigma) * (1 + REL_TOL)
    return _finalize(k[keep], h, 0.0, sigma, spec, "lp-grid")


def blackbox_grid(d: int, norm: NormSpec, sigma: float) -> CoveringTemplate:
    """Conservative grid for a norm known only through equivalence constants.

    Spacing 2*sigma/(d*c_high) makes each cell's norm-half-diameter at
    most sigma; grid points are kept while their sup norm stays within
    (1+sigma)/c_low, which contains the unit norm ball.
    """
    _check_args(d, sigma)
    c_low, c_high = norm.constants(d)
    h = 2.0 * sigma / (d * c_high)
    bound = (1.0 + sigma) / c_low
    m = int(math.floor(bound / h))
    k = _lattice_box(d, m)
    keep = np.abs(h * k).max(axis=1) <= bound * (1 + REL_TOL)
    return _finalize(k[keep], h, 0.0, sigma, norm, "blackbox-grid")


_CACHE: dict = {}


def template_for(norm: NormSpec, d: int, sigma: float) -> CoveringTemplate:
    """The covering template a builder uses for this norm, cached per (norm, d, sigma)."""
    if norm.kind == "blackbox":
        key = ("bb", id(norm.func), norm.c_low, norm.c_high, d, sigma)
    else:
        key = ("lp", norm.p, d, sigma)
    tmpl = _CACHE.get(key)
    if tmpl is None:
        if norm.kind == "blackbox":
            tmpl = blackbox_grid(d, norm, sigma)
        elif math.isinf(norm.p):
            tmpl = linf_grid(d, sigma)
        elif norm.p == 2.0:
            tmpl = euclidean_grid(d, sigma)
        else:
            tmpl = lp_grid(d, norm.p, sigma)
        _CACHE[key] = tmpl
    return tmpl


def scale_translate(template: CoveringTemplate, center, radius: float) -> np.ndarray:
    """{center + radius*c : c in template.centers}; covers B(center, radius) at sigma*radius."""
    center = np.asarray(center, dtype=float)
    if center.shape != (template.dim,):
        raise ParameterError(f"center must have dimension {template.dim}")
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    return center + radius * template.centers


def sample_unit_ball(norm: NormSpec, d: int, count: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish samples of the unit norm ball via rejection from its sup-norm box.

    Intended for soundness testing in low dimension; acceptance decays
    exponentially with d.
    """
    c_low, _ = norm.constants(d)
    out = np.empty((count, d))
    have = 0
    while have < count:
        cand = rng.uniform(-1.0 / c_low, 1.0 / c_low, size=(max(count, 1024), d))
        good = cand[norms(cand, norm) <= 1.0]
        take = min(count - have, len(good))
        out[have:have + take] = good[:take]
        have += take
    return out
