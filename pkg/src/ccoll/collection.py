"""Candidate-center collection builders.

The quadratic builder covers scheduled balls around every ordered input
pair; the linear builder covers them only around WSPD representatives.
Both emit candidates in a fixed canonical order (inputs first, then one
contiguous template block per (pair, level, side) "cloud"), and both
record the cloud structure so verification can reason about candidates
without scanning them.
"""

from __future__ import annotations

import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .covering import CoveringTemplate, template_for
from .errors import BuildError, InputError, ParameterError, ResourceError
from .metric import REL_TOL, NormSpec, PointSet, distance, norms
from .wspd import build_split_tree, extract_wspd

# Refuse to materialize candidate arrays beyond this many bytes unless
# overridden; generation is exact-size so the check runs before any
# allocation.
DEFAULT_MAX_CANDIDATE_BYTES = 3_200_000_000


@dataclass(frozen=True)
class ScheduleParams:
    """Parameter choices for a target epsilon.

    For epsilon >= 1 the input set is already a (1+epsilon)-collection
    for itself, so builders take the input-only path and the remaining
    fields are unused sentinels.
    """

    epsilon: float
    input_only: bool
    levels: int          # I
    delta: float         # epsilon**(1 + 1/I), covering radius factor
    t: float             # WSPD separation
    delta_template: float  # template sigma for the linear builder, 0.3*epsilon


def compute_params(epsilon: float) -> ScheduleParams:
    if not (epsilon > 0) or math.isnan(epsilon):
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    t = max(10.0, (1.0 + epsilon) / epsilon)
    if epsilon >= 1.0:
        return ScheduleParams(epsilon, True, 0, math.nan, t, math.nan)
    levels = math.ceil(math.log(epsilon) / math.log(0.9) - 1e-12)
    delta = epsilon ** (1.0 + 1.0 / levels)
    if delta < 0.9 * epsilon * (1 - REL_TOL):
        raise BuildError(f"delta={delta} fell below 0.9*epsilon")
    return ScheduleParams(epsilon, False, levels, delta, t, 0.3 * epsilon)


@dataclass(frozen=True)
class Lens:
    """Intersection of the two balls B(x1,r), B(x2,r) with r = dist/(1+eps)."""

    x1: np.ndarray
    x2: np.ndarray
    epsilon: float
    norm: NormSpec
    r: float

    def contains(self, point, rel_tol: float = 0.0) -> bool:
        bound = self.r * (1 + rel_tol)
        return (distance(self.x1, point, self.norm) <= bound
                and distance(self.x2, point, self.norm) <= bound)


def lens_of(x1, x2, epsilon: float, norm: NormSpec) -> Lens:
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if not (epsilon > 0):
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    d = distance(x1, x2, norm)
    if d == 0.0:
        raise InputError("lens is undefined for coincident points")
    return Lens(x1, x2, epsilon, norm, d / (1.0 + epsilon))


@dataclass(frozen=True)
class RadiusSchedule:
    """Geometric radii d_0..d_I between the lens scales, plus cover radii r_1..r_I."""

    pair_distance: float
    levels: np.ndarray       # d_i for i = 0..I
    cover_radii: np.ndarray  # r_i = d_i*(1+2/t) + dist/t for i = 1..I


def radius_schedule(x1, x2, params: ScheduleParams, norm: NormSpec) -> RadiusSchedule:
    if params.input_only:
        raise ParameterError("no radius schedule for the input-only parameterization")
    dist = distance(x1, x2, norm)
    if dist == 0.0:
        raise InputError("radius schedule is undefined for coincident points")
    return RadiusSchedule(dist, *_schedule_arrays(dist, params))


def _schedule_arrays(dist: float, params: ScheduleParams) -> tuple[np.ndarray, np.ndarray]:
    eps, big_i, t = params.epsilon, params.levels, params.t
    i = np.arange(big_i + 1, dtype=float)
    levels = dist * eps ** (1.0 - i / big_i) / (1.0 + eps)
    cover = levels[1:] * (1.0 + 2.0 / t) + dist / t
    if np.any(cover > 2.2 * levels[1:] * (1 + REL_TOL)):
        raise BuildError("cover radius exceeded 2.2*d_i; parameter bug")
    return levels, cover


@dataclass
class CloudIndex:
    """Per-(pair, level, side) slices of the candidate array.

    Cloud c occupies candidate rows [n + c*template.size, n + (c+1)*template.size);
    its rows are side + radius * template.centers, in template order.
    """

    template: CoveringTemplate
    side_index: np.ndarray    # (m,) input-point index the cloud is centered on
    radii: np.ndarray         # (m,) scale factor applied to the template
    premise_radii: np.ndarray  # (m,) covering radius each cloud must achieve
    levels: np.ndarray        # (m,) schedule level i in 1..I
    pair_index: np.ndarray    # (m,) ordered-pair rank or WSPD pair index

    @property
    def count(self) -> int:
        return len(self.side_index)


@dataclass
class CentersCollection:
    """Candidate centers: the input points followed by covering clouds."""

    candidates: np.ndarray
    epsilon: float
    norm: NormSpec
    builder: str              # "quadratic" | "linear" | "input-only"
    n: int
    s: Optional[int]          # WSPD size (linear builder only)
    levels: Optional[int]     # I
    template_size: Optional[int]
    build_ms: float
    clouds: Optional[CloudIndex] = None

    @property
    def candidate_count(self) -> int:
        return self.candidates.shape[0]

    @property
    def dim(self) -> int:
        return self.candidates.shape[1]


def _max_candidate_bytes() -> int:
    env = os.environ.get("CCOLL_MAX_CANDIDATE_BYTES")
    return int(env) if env else DEFAULT_MAX_CANDIDATE_BYTES


def _check_budget(count: int, dim: int, detail: str) -> None:
    need = count * dim * 8
    cap = _max_candidate_bytes()
    if need > cap:
        raise ResourceError(
            f"collection would hold {count} candidates ({need/1e9:.2f} GB > "
            f"cap {cap/1e9:.2f} GB); {detail}. Raise CCOLL_MAX_CANDIDATE_BYTES to force."
        )


def _input_only(X: PointSet, epsilon: float, norm: NormSpec, started: float) -> CentersCollection:
    cands = np.ascontiguousarray(X.coords)
    cands.setflags(write=False)
    return CentersCollection(
        candidates=cands, epsilon=epsilon, norm=norm, builder="input-only",
        n=X.n, s=None, levels=None, template_size=None,
        build_ms=(time.perf_counter() - started) * 1000.0,
    )


def _run_chunks(n_items: int, threads: int, work) -> None:
    """Run work(start, stop) over contiguous chunks, possibly on several threads.

    Each work item writes to a precomputed disjoint slice of the output,
    so the result is identical for any thread count.
    """
    if threads <= 1 or n_items <= 1:
        work(0, n_items)
        return
    threads = min(threads, n_items)
    bounds = np.linspace(0, n_items, threads + 1).astype(int)
    workers = [
        threading.Thread(target=work, args=(int(a), int(b)))
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    for w in workers:
        w.start()
    for w in workers:
        w.join()


def build_quadratic(X: PointSet, epsilon: float, norm: NormSpec,
                    threads: int = 1) -> CentersCollection:
    """Cover B(x1, d_i(x1,x2)) for every ordered pair and level (Lemma-4 route)."""
    started = time.perf_counter()
    params = compute_params(epsilon)
    if params.input_only or X.n == 1:
        return _input_only(X, epsilon, norm, started)

    n, d = X.n, X.dim
    big_i = params.levels
    tmpl = template_for(norm, d, params.delta)
    tsize = tmpl.size
    n_pairs = n * (n - 1)
    total = n + n_pairs * big_i * tsize
    _check_budget(total, d, f"quadratic builder: n + n(n-1)*I*|C| = {n} + {n_pairs}*{big_i}*{tsize}")

    pts = X.coords
    diffs = pts[:, None, :] - pts[None, :, :]
    dist_mat = norms(diffs, norm)

    out = np.empty((total, d))
    out[:n] = pts
    m = n_pairs * big_i
    side_index = np.empty(m, dtype=np.int64)
    radii = np.empty(m)
    premise = np.empty(m)
    level_arr = np.empty(m, dtype=np.int64)
    pair_arr = np.empty(m, dtype=np.int64)

    ordered = [(j1, j2) for j1 in range(n) for j2 in range(n) if j1 != j2]
    block = big_i * tsize

    def work(lo: int, hi: int) -> None:
        for rank in range(lo, hi):
            j1, j2 = ordered[rank]
            dist = dist_mat[j1, j2]
            levels, _ = _schedule_arrays(dist, params)
            di = levels[1:]
            rows = pts[j1] + di[:, None, None] * tmpl.centers[None, :, :]
            base = n + rank * block
            out[base:base + block] = rows.reshape(block, d)
            sl = slice(rank * big_i, (rank + 1) * big_i)
            side_index[sl] = j1
            radii[sl] = di
            premise[sl] = params.delta * di
            level_arr[sl] = np.arange(1, big_i + 1)
            pair_arr[sl] = rank

    _run_chunks(n_pairs, threads, work)
    out.setflags(write=False)
    clouds = CloudIndex(tmpl, side_index, radii, premise, level_arr, pair_arr)
    return CentersCollection(
        candidates=out, epsilon=epsilon, norm=norm, builder="quadratic",
        n=n, s=None, levels=big_i, template_size=tsize,
        build_ms=(time.perf_counter() - started) * 1000.0, clouds=clouds,
    )


def build_linear(X: PointSet, epsilon: float, norm: NormSpec,
                 threads: int = 1) -> CentersCollection:
    """Cover B(x, r_i(k,t)) for WSPD representatives only (Lemma-5 route)."""
    started = time.perf_counter()
    params = compute_params(epsilon)
    if params.input_only or X.n == 1:
        return _input_only(X, epsilon, norm, started)

    n, d = X.n, X.dim
    big_i, t = params.levels, params.t
    tree = build_split_tree(X)
    pairs = extract_wspd(tree, t, norm)
    s = pairs.size
    tmpl = template_for(norm, d, params.delta_template)
    tsize = tmpl.size
    total = n + 2 * s * big_i * tsize
    _check_budget(total, d, f"linear builder: n + 2*s*I*|C| = {n} + 2*{s}*{big_i}*{tsize}")

    pts = X.coords
    a_pts = pts[pairs.a_reps]
    b_pts = pts[pairs.b_reps]
    pair_dist = norms(a_pts - b_pts, norm)

    i = np.arange(1, big_i + 1, dtype=float)
    scale_d = params.epsilon ** (1.0 - i / big_i) / (1.0 + params.epsilon)
    d_levels = pair_dist[:, None] * scale_d[None, :]            # (s, I)
    r_levels = d_levels * (1.0 + 2.0 / t) + pair_dist[:, None] / t

    if np.any(r_levels > 2.2 * d_levels * (1 + REL_TOL)):
        raise BuildError("cover radius exceeded 2.2*d_i; parameter bug")
    # Lemma-5 radius condition: the scaled template covering radius must
    # stay within delta*d_i*(1-2/t) for every emitted (k, i).
    need = params.delta * d_levels * (1.0 - 2.0 / t)
    got = params.delta_template * r_levels
    if np.any(got > need * (1 + REL_TOL)):
        raise BuildError("0.3*eps*r_i exceeded delta*d_i*(1-2/t); parameter bug")

    out = np.empty((total, d))
    out[:n] = pts
    m = 2 * s * big_i
    side_index = np.empty(m, dtype=np.int64)
    radii = np.empty(m)
    premise = np.empty(m)
    level_arr = np.empty(m, dtype=np.int64)
    pair_arr = np.empty(m, dtype=np.int64)
    block = 2 * big_i * tsize

    def work(lo: int, hi: int) -> None:
        for k in range(lo, hi):
            ab = np.stack([a_pts[k], b_pts[k]])                  # (2, d)
            r = r_levels[k]                                      # (I,)
            rows = ab[None, :, None, :] + r[:, None, None, None] * tmpl.centers[None, None, :, :]
            base = n + k * block
            out[base:base + block] = rows.reshape(block, d)
            sl = slice(k * 2 * big_i, (k + 1) * 2 * big_i)
            side_index[sl] = np.tile([pairs.a_reps[k], pairs.b_reps[k]], big_i)
            radii[sl] = np.repeat(r, 2)
            premise[sl] = np.repeat(need[k], 2)
            level_arr[sl] = np.repeat(np.arange(1, big_i + 1), 2)
            pair_arr[sl] = k

    _run_chunks(s, threads, work)
    out.setflags(write=False)
    clouds = CloudIndex(tmpl, side_index, radii, premise, level_arr, pair_arr)
    return CentersCollection(
        candidates=out, epsilon=epsilon, norm=norm, builder="linear",
        n=n, s=s, levels=big_i, template_size=tsize,
        build_ms=(time.perf_counter() - started) * 1000.0, clouds=clouds,
    )


def dedup_candidates(collection: CentersCollection, quantum: float = 0.0) -> CentersCollection:
    """Merge candidates that coincide after quantizing coordinates.

    quantum 0 merges exact duplicates only, which preserves the covering
    guarantees; positive quanta can move surviving candidates' identity
    and are for output compaction only.  The cloud index does not
    survive (row offsets change), so verification on the result falls
    back to the direct scan.
    """
    if quantum < 0:
        raise ParameterError(f"quantum must be nonnegative, got {quantum}")
    cands = collection.candidates
    if quantum == 0.0:
        view = np.ascontiguousarray(cands).view([("", cands.dtype)] * cands.shape[1])
        _, first = np.unique(view.ravel(), return_index=True)
    else:
        keyed = np.round(cands / quantum).astype(np.int64)
        view = np.ascontiguousarray(keyed).view([("", keyed.dtype)] * keyed.shape[1])
        _, first = np.unique(view.ravel(), return_index=True)
    keep = np.sort(first)
    merged = np.ascontiguousarray(cands[keep])
    merged.setflags(write=False)
    return CentersCollection(
        candidates=merged, epsilon=collection.epsilon, norm=collection.norm,
        builder=collection.builder, n=collection.n, s=collection.s,
        levels=collection.levels, template_size=collection.template_size,
        build_ms=collection.build_ms, clouds=None,
    )
