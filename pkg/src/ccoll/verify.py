"""Empirical certification that a candidate set approximates all of space.

The universal claim is not decidable by sampling, so this module plays
two roles: a seeded, reproducible probe harness (uniform, offset, lens
and far probes), and an exact best-factor search.  For collections that
carry their cloud structure the search prunes whole clouds with
certified lower bounds and enumerates only the lattice points that
could still win, so it is exact at any collection size.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .collection import CentersCollection, CloudIndex
from .errors import InputError, SchemaError
from .metric import REL_TOL, NormSpec, PointSet, norms

DEFAULT_MIX = (0.25, 0.25, 0.40, 0.10)  # uniform, gaussian, lens, far
HISTOGRAM_BINS = 16
_FAR_RATIO = 1.05        # probes whose input distances vary less than this are "metrically far"
_QUICK_CAP = 512         # clouds given a nearest-lattice-point evaluation before full search
_CHUNK = 262_144         # candidate positions evaluated per vectorized block


@dataclass
class ProbeReport:
    epsilon: float
    seed: int
    num_probes: int
    class_counts: dict
    max_factor: float
    argmax_probe: np.ndarray
    witness_index: int
    witness: np.ndarray
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    passed: bool
    factors: np.ndarray
    witnesses: np.ndarray

    @property
    def threshold(self) -> float:
        return (1.0 + self.epsilon) * (1.0 + REL_TOL)


def lens_stress(X: PointSet, epsilon: float, norm: NormSpec, count: int,
                seed: int) -> np.ndarray:
    """Points inside randomly chosen nonempty lenses, by rejection sampling.

    A pair whose lens yields no hit after 100 rejections is skipped, so
    fewer than ``count`` points may come back (always, for epsilon >= 1
    in strictly convex norms).
    """
    if X.n < 2:
        raise InputError("lens probes need at least two points")
    if count < 1:
        raise InputError("count must be positive")
    rng = np.random.default_rng(seed)
    pts = X.coords
    n, d = X.n, X.dim
    c_low = norm.constants(d)[0]
    out: list[np.ndarray] = []
    for _ in range(max(50 * count, 1000)):
        if len(out) >= count:
            break
        i = int(rng.integers(n))
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        x1, x2 = pts[i], pts[j]
        r = float(norms(x1 - x2, norm)) / (1.0 + epsilon)
        rc = r / c_low
        lo = np.maximum(x1, x2) - rc
        hi = np.minimum(x1, x2) + rc
        if np.any(lo > hi):
            continue
        for _ in range(100):
            u = lo + rng.random(d) * (hi - lo)
            du = norms(np.stack([u - x1, u - x2]), norm)
            if du[0] <= r and du[1] <= r:
                out.append(u)
                break
    if not out:
        return np.empty((0, d))
    return np.asarray(out)


def _lex_better(f_new: float, i_new: int, f_old: float, i_old: int) -> bool:
    return f_new < f_old or (f_new == f_old and i_new < i_old)


class _CloudEngine:
    """Exact best-factor search over a structured collection.

    Bounds only skip a cloud when every candidate in it provably cannot
    beat (or tie) the current best, and within surviving clouds only
    lattice points violating a certified single-anchor ball are skipped,
    so values and lowest-index witnesses match the direct scan exactly.
    """

    def __init__(self, X: PointSet, collection: CentersCollection, norm: NormSpec):
        clouds = collection.clouds
        if clouds is None:
            raise ValueError("engine needs a collection with cloud structure")
        if collection.n != X.n or collection.dim != X.dim:
            raise SchemaError("collection does not match the input point set")
        self.X = X
        self.pts = X.coords
        self.n = X.n
        self.d = X.dim
        self.norm = norm
        self.clouds = clouds
        self.tmpl = clouds.template
        self.tsize = self.tmpl.size
        self.candidates = collection.candidates
        if not np.array_equal(self.candidates[:self.n], self.pts):
            raise SchemaError("collection rows 0..n-1 must be the input points")
        self.Dxx = norms(self.pts[:, None, :] - self.pts[None, :, :], norm)
        self.side = clouds.side_index
        self.radii = clouds.radii
        self.tmax = float(norms(self.tmpl.centers, norm).max())
        self.ball = self.radii * self.tmax  # outer radius of each cloud
        self.c_low = norm.constants(self.d)[0]
        self.m = clouds.count

        maxd = self.Dxx.max(axis=0)
        central = int(maxd.argmin())
        e1 = int(self.Dxx[central].argmax())
        e2 = int(self.Dxx[e1].argmax())
        self.static_anchors = sorted(set([central, e1, e2]))
        self._anchor_rows = {a: self.Dxx[a, self.side] for a in self.static_anchors}
        mx = self.Dxx[0, self.side].copy()
        am = np.zeros(self.m, dtype=np.int64)
        for j in range(1, self.n):
            row = self.Dxx[j, self.side]
            upd = row > mx
            mx[upd] = row[upd]
            am[upd] = j
        self.max_side = mx
        self.far_anchor = am
        self.g_lb = self.max_side - self.ball
        self._qfar: Optional[tuple[float, np.ndarray, np.ndarray]] = None
        self._spot_check()

    def _spot_check(self) -> None:
        for c in (0, self.m - 1):
            row = self.n + c * self.tsize
            want = self.pts[self.side[c]] + self.radii[c] * self.tmpl.centers[0]
            if not np.array_equal(self.candidates[row], want):
                raise SchemaError("cloud structure inconsistent with candidate rows")

    # -- exact evaluation helpers ------------------------------------

    def _cloud_positions(self, cloud: int, kvecs: np.ndarray) -> np.ndarray:
        c = self.tmpl.origin + self.tmpl.spacing * kvecs.astype(float)
        return self.pts[self.side[cloud]] + self.radii[cloud] * c

    def _fold_batch(self, pos: np.ndarray, idx: np.ndarray, w: np.ndarray,
                    best: tuple[float, int]) -> tuple[float, int]:
        """Exact factors of explicit candidates, folded into the running best."""
        f, wi = best
        for lo in range(0, len(pos), _CHUNK):
            p_blk = pos[lo:lo + _CHUNK]
            i_blk = idx[lo:lo + _CHUNK]
            fac = (norms(p_blk[:, None, :] - self.pts[None, :, :], self.norm)
                   * w[None, :]).max(axis=1)
            jmin = fac.argmin()
            fmin = float(fac[jmin])
            if fmin <= f:
                imin = int(i_blk[fac == fmin].min())
                if _lex_better(fmin, imin, f, wi):
                    f, wi = fmin, imin
        return f, wi

    def _progressive(self, pos: np.ndarray, idx: np.ndarray, w: np.ndarray,
                     js: np.ndarray, best: tuple[float, int]) -> tuple[float, int]:
        """Exact min over explicit candidates, dropping provably-worse rows early."""
        f, wi = best
        cut = f * (1 + 1e-12)
        vals = np.zeros(len(pos))
        alive = np.arange(len(pos))
        for step, j in enumerate(js):
            vals = np.maximum(vals, norms(pos[alive] - self.pts[j], self.norm) * w[j])
            if step < 4 or step % 8 == 7:
                keep = vals <= cut
                if not keep.all():
                    alive = alive[keep]
                    vals = vals[keep]
                if alive.size == 0:
                    return f, wi
        keep = vals <= cut
        alive, vals = alive[keep], vals[keep]
        if alive.size:
            jmin = vals.argmin()
            fmin = float(vals[jmin])
            imin = int(idx[alive[vals == fmin]].min())
            if _lex_better(fmin, imin, f, wi):
                f, wi = fmin, imin
        return f, wi

    # -- lattice enumeration ------------------------------------------

    def _boxes(self, cloud_ids: np.ndarray, anchor_pts: np.ndarray,
               rho: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer lattice ranges per cloud covering a norm ball around an anchor.

        The norm ball of radius rho around the anchor, expressed in
        template coordinates, is contained in the sup box of radius
        rho/(R*c_low); anything outside cannot satisfy the anchor
        constraint, so enumeration over these ranges is exhaustive.
        """
        tm = self.tmpl
        y = (anchor_pts - self.pts[self.side[cloud_ids]]) / self.radii[cloud_ids][:, None]
        rt = (rho / self.radii[cloud_ids] / self.c_low)[:, None]
        klo = np.ceil((y - rt - tm.origin) / tm.spacing - 1e-12).astype(np.int64)
        khi = np.floor((y + rt - tm.origin) / tm.spacing + 1e-12).astype(np.int64)
        klo = np.maximum(klo, tm.kmin)
        khi = np.minimum(khi, tm.kmin + tm.kdims - 1)
        counts = np.prod(np.maximum(khi - klo + 1, 0), axis=1)
        return klo, khi, counts

    def _enumerate(self, cloud_ids: np.ndarray, klo: np.ndarray, khi: np.ndarray,
                   counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions and global indices of lattice points in the given boxes.

        Ragged but loop-free: every box cell across every cloud gets a
        flat enumeration index, decoded per axis by mixed-radix
        arithmetic, then filtered to lattice points the template kept.
        """
        nz = counts > 0
        cloud_ids, klo, khi, counts = cloud_ids[nz], klo[nz], khi[nz], counts[nz]
        total = int(counts.sum())
        if total == 0:
            return np.empty((0, self.d)), np.empty(0, dtype=np.int64)
        dims = khi - klo + 1
        starts = np.cumsum(counts) - counts
        owner = np.repeat(np.arange(len(cloud_ids)), counts)
        rem = np.arange(total, dtype=np.int64) - starts[owner]
        kv = np.empty((total, self.d), dtype=np.int64)
        for ax in range(self.d - 1, -1, -1):
            dim_ax = dims[owner, ax]
            kv[:, ax] = klo[owner, ax] + rem % dim_ax
            rem //= dim_ax
        ranks = self.tmpl.lattice_ranks(kv)
        ok = ranks >= 0
        if not ok.any():
            return np.empty((0, self.d)), np.empty(0, dtype=np.int64)
        owner, kv, ranks = owner[ok], kv[ok], ranks[ok]
        ids = cloud_ids[owner]
        cvec = self.tmpl.origin + self.tmpl.spacing * kv.astype(float)
        pos = self.pts[self.side[ids]] + self.radii[ids][:, None] * cvec
        idx = self.n + ids * self.tsize + ranks
        return pos, idx

    # -- far probes ----------------------------------------------------

    def _build_qfar(self, ratio_needed: float) -> tuple[float, np.ndarray, np.ndarray]:
        """Candidates whose worst input distance is within a factor K of optimal.

        For a probe whose input distances all agree within K, the best
        candidate must come from this set: any other candidate's factor
        is at least G(q)*w_min > G*K*w_min >= the set's best.
        """
        kfac = max(_FAR_RATIO, ratio_needed) * 1.01
        gx = self.Dxx.max(axis=0)
        g_ub = float(gx.min())
        order = np.argsort(self.g_lb, kind="stable")

        # phase 1: exact minimum of G(q) = max_j dist(x_j, q)
        at = 0
        while at < self.m:
            stop = min(at + 512, self.m)
            chunk = order[at:at + 512]
            chunk = chunk[self.g_lb[chunk] <= g_ub * (1 + 1e-12)]
            if chunk.size == 0:
                break
            pos, _ = self._gband(chunk, g_ub * (1 + 1e-12))
            if len(pos):
                g_ub = min(g_ub, float(self._gmax(pos).min()))
            at = stop

        # phase 2: collect everything within the K band
        thr = g_ub * kfac
        alive = np.flatnonzero(self.g_lb <= thr * (1 + 1e-12))
        keep_pos: list[np.ndarray] = []
        keep_idx: list[np.ndarray] = []
        for lo in range(0, alive.size, 512):
            pos, idx = self._gband(alive[lo:lo + 512], thr * (1 + 1e-12))
            if len(pos):
                gvals = self._gmax(pos)
                sel = gvals <= thr * (1 + 1e-12)
                keep_pos.append(pos[sel])
                keep_idx.append(idx[sel])
        if keep_pos:
            qpos = np.concatenate(keep_pos)
            qidx = np.concatenate(keep_idx)
        else:
            qpos = np.empty((0, self.d))
            qidx = np.empty(0, dtype=np.int64)
        self._qfar = (kfac, qpos, qidx)
        return self._qfar

    def _gband(self, cloud_ids: np.ndarray, bound: float) -> tuple[np.ndarray, np.ndarray]:
        """Lattice points of the given clouds possibly within max-input-distance bound."""
        anchors = self.pts[self.far_anchor[cloud_ids]]
        klo, khi, counts = self._boxes(cloud_ids, anchors, np.full(cloud_ids.size, bound))
        return self._enumerate(cloud_ids, klo, khi, counts)

    def _gmax(self, pos: np.ndarray) -> np.ndarray:
        out = np.empty(len(pos))
        for lo in range(0, len(pos), _CHUNK):
            blk = pos[lo:lo + _CHUNK]
            out[lo:lo + _CHUNK] = norms(blk[:, None, :] - self.pts[None, :, :],
                                        self.norm).max(axis=1)
        return out

    # -- main entry ------------------------------------------------------

    def best(self, p: np.ndarray, dp: Optional[np.ndarray] = None,
             x_best: Optional[tuple[float, int]] = None) -> tuple[float, int]:
        if dp is None:
            dp = norms(self.pts - p, self.norm)
        x0 = int(dp.argmin())
        dmin = float(dp[x0])
        if dmin == 0.0:
            # p coincides with input x0; every candidate elsewhere is at
            # ratio inf there, and any candidate at p scores exactly 1.
            return 1.0, x0
        w = 1.0 / dp
        if x_best is None:
            fx = (self.Dxx * w[:, None]).max(axis=0)
            ix = int(fx.argmin())
            best = (float(fx[ix]), ix)
        else:
            best = x_best
        if self.m == 0:
            return best

        if float(dp.max()) <= _FAR_RATIO * dmin:
            ratio = float(dp.max()) / dmin
            qf = self._qfar
            if qf is None or qf[0] < ratio * 1.001:
                qf = self._build_qfar(ratio)
            _, qpos, qidx = qf
            if len(qpos):
                best = self._fold_batch(qpos, qidx, w, best)
            return best

        # bounds: a cloud whose certified lower bound exceeds the current
        # best cannot contain the winner; anchors are the probe's nearest
        # input plus three spread inputs.
        bnd = np.maximum(self.Dxx[x0, self.side] - self.ball, 0.0) * w[x0]
        for a in self.static_anchors:
            if a != x0:
                np.maximum(bnd, np.maximum(self._anchor_rows[a] - self.ball, 0.0) * w[a], out=bnd)

        cut = best[0] * (1 + 1e-12)
        alive = np.flatnonzero(bnd <= cut)
        if alive.size == 0:
            return best

        # quick pass: the lattice point nearest p in the most promising clouds
        take = alive
        if take.size > _QUICK_CAP:
            take = take[np.argpartition(bnd[take], _QUICK_CAP)[:_QUICK_CAP]]
        y = (p - self.pts[self.side[take]]) / self.radii[take][:, None]
        kv = np.round((y - self.tmpl.origin) / self.tmpl.spacing).astype(np.int64)
        ranks = self.tmpl.lattice_ranks(kv)
        ok = ranks >= 0
        if ok.any():
            ids = take[ok]
            cvec = self.tmpl.origin + self.tmpl.spacing * kv[ok].astype(float)
            qpos = self.pts[self.side[ids]] + self.radii[ids][:, None] * cvec
            qidx = self.n + ids * self.tsize + ranks[ok]
            best = self._fold_batch(qpos, qidx, w, best)
            cut = best[0] * (1 + 1e-12)
            alive = alive[bnd[alive] <= cut]

        if alive.size == 0:
            return best

        # exhaustive stage: every candidate within the nearest-input ball
        js = np.argsort(dp, kind="stable")
        rho = np.full(alive.size, cut * dmin)
        klo, khi, counts = self._boxes(alive, np.broadcast_to(self.pts[x0], (alive.size, self.d)), rho)
        nonzero = counts > 0
        alive, klo, khi, counts = alive[nonzero], klo[nonzero], khi[nonzero], counts[nonzero]
        if alive.size == 0:
            return best
        order = np.argsort(counts, kind="stable")
        alive, klo, khi, counts = alive[order], klo[order], khi[order], counts[order]
        csum = np.cumsum(counts)
        start = 0
        while start < alive.size:
            stop = int(np.searchsorted(csum, (csum[start - 1] if start else 0) + 4 * _CHUNK)) + 1
            sel = slice(start, min(stop, alive.size))
            pos, idx = self._enumerate(alive[sel], klo[sel], khi[sel], counts[sel])
            if len(pos):
                best = self._progressive(pos, idx, w, js, best)
            start = sel.stop
        return best


def _brute_best_factor(p, candidates: np.ndarray, X: PointSet,
                       norm: NormSpec) -> tuple[float, int]:
    """Reference scan over explicit candidates; exact but linear in N*n."""
    pts = X.coords
    dp = norms(pts - np.asarray(p, dtype=float), norm)
    best_f, best_i = math.inf, -1
    zero = dp == 0
    with np.errstate(divide="ignore"):
        w = 1.0 / dp
    for lo in range(0, len(candidates), _CHUNK):
        blk = candidates[lo:lo + _CHUNK]
        dq = norms(blk[:, None, :] - pts[None, :, :], norm)
        with np.errstate(invalid="ignore"):
            ratio = dq * w[None, :]
        if zero.any():
            zcols = np.flatnonzero(zero)
            sub = dq[:, zcols]
            rat = np.where(sub == 0, 1.0, np.inf)
            ratio[:, zcols] = rat
        fac = ratio.max(axis=1)
        j = int(fac.argmin())
        fmin = float(fac[j])
        if fmin <= best_f:
            imin = int(lo + np.flatnonzero(fac == fmin).min())
            if _lex_better(fmin, imin, best_f, best_i):
                best_f, best_i = fmin, imin
    return best_f, best_i


def best_factor(p, collection: CentersCollection, X: PointSet,
                norm: Optional[NormSpec] = None) -> tuple[float, int]:
    """Best approximation factor over the collection and its witness index.

    Ties go to the lowest candidate index.  Uses the cloud engine when
    the collection carries structure, the direct scan otherwise.
    """
    if norm is None:
        norm = collection.norm
    if collection.candidate_count == 0:
        raise InputError("empty candidate collection")
    p = np.asarray(p, dtype=float)
    if p.shape != (collection.dim,):
        raise InputError(f"probe must have dimension {collection.dim}")
    if collection.clouds is not None:
        return _CloudEngine(X, collection, norm).best(p)
    return _brute_best_factor(p, collection.candidates, X, norm)


def _generate_probes(X: PointSet, epsilon: float, norm: NormSpec,
                     counts: dict, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """The seeded probe mix; stream i uses PCG64(SeedSequence(seed).state[i])."""
    keys = np.random.SeedSequence(seed).generate_state(4, dtype=np.uint64)
    pts = X.coords
    d = X.dim
    lo, hi = X.bounding_box()
    ext = hi - lo
    emax = float(ext.max())
    eff = np.where(ext > 0, ext, emax if emax > 0 else 1.0)
    diam = float(norms(ext, norm))
    if diam == 0.0:
        diam = 1.0

    parts: list[np.ndarray] = []
    labels: list[np.ndarray] = []

    rng = np.random.default_rng(keys[0])
    c = counts["uniform"]
    parts.append((lo - eff / 2.0) + rng.random((c, d)) * (2.0 * eff))
    labels.append(np.full(c, 0))

    rng = np.random.default_rng(keys[1])
    c = counts["gauss"]
    idx = rng.integers(0, X.n, c)
    scales = np.asarray([0.01, 0.1, 1.0])[rng.integers(0, 3, c)]
    parts.append(pts[idx] + rng.standard_normal((c, d)) * (scales * diam)[:, None])
    labels.append(np.full(c, 1))

    c = counts["lens"]
    if c:
        lens_pts = lens_stress(X, epsilon, norm, c, int(keys[2]))
        short = c - len(lens_pts)
        if short:
            fill_rng = np.random.default_rng([int(keys[2]), 1])
            fill = (lo - eff / 2.0) + fill_rng.random((short, d)) * (2.0 * eff)
            lens_pts = np.concatenate([lens_pts, fill]) if len(lens_pts) else fill
        parts.append(lens_pts)
        labels.append(np.full(c, 2))

    rng = np.random.default_rng(keys[3])
    c = counts["far"]
    dirs = rng.standard_normal((c, d))
    dn = np.sqrt((dirs * dirs).sum(axis=1))
    dn[dn == 0] = 1.0
    center = (lo + hi) / 2.0
    parts.append(center + (dirs / dn[:, None]) * (1000.0 * diam))
    labels.append(np.full(c, 3))

    return np.concatenate(parts), np.concatenate(labels)


def probe_verify(X: PointSet, collection: CentersCollection, epsilon: float,
                 norm: Optional[NormSpec] = None, num_probes: int = 10_000,
                 seed: int = 42, mix: Optional[tuple] = None) -> ProbeReport:
    """Probe the collection and report the worst observed factor.

    Deterministic given the seed: probes are generated from four split
    substreams (uniform-in-inflated-box, scaled Gaussian offsets, lens
    interiors, metrically-far), evaluated in a fixed order.
    """
    if num_probes < 1:
        raise InputError(f"num_probes must be positive, got {num_probes}")
    if norm is None:
        norm = collection.norm
    mix = DEFAULT_MIX if mix is None else tuple(mix)
    if len(mix) != 4 or any(f < 0 for f in mix) or abs(sum(mix) - 1.0) > 1e-9:
        raise InputError(f"mix must be 4 nonnegative fractions summing to 1, got {mix}")
    c_uni = int(mix[0] * num_probes)
    c_gau = int(mix[1] * num_probes)
    c_len = int(mix[2] * num_probes)
    if X.n < 2:
        c_uni += c_len
        c_len = 0
    c_far = num_probes - c_uni - c_gau - c_len
    counts = {"uniform": c_uni, "gauss": c_gau, "lens": c_len, "far": c_far}

    probes, _ = _generate_probes(X, epsilon, norm, counts, seed)
    pts = X.coords
    n = X.n
    factors = np.empty(num_probes)
    witnesses = np.empty(num_probes, dtype=np.int64)

    engine = _CloudEngine(X, collection, norm) if collection.clouds is not None else None
    input_only = collection.clouds is None and collection.candidate_count == n \
        and np.array_equal(collection.candidates, pts)

    dxx = norms(pts[:, None, :] - pts[None, :, :], norm)
    for lo_i in range(0, num_probes, 256):
        blk = probes[lo_i:lo_i + 256]
        dp_blk = norms(blk[:, None, :] - pts[None, :, :], norm)
        for r in range(len(blk)):
            dp = dp_blk[r]
            dmin = dp.min()
            if dmin == 0.0:
                x_best = (1.0, int(dp.argmin()))
            else:
                fx = (dxx * (1.0 / dp)[:, None]).max(axis=0)
                ix = int(fx.argmin())
                x_best = (float(fx[ix]), ix)
            i = lo_i + r
            if input_only:
                factors[i], witnesses[i] = x_best
            elif engine is not None:
                factors[i], witnesses[i] = engine.best(blk[r], dp=dp, x_best=x_best)
            else:
                factors[i], witnesses[i] = _brute_best_factor(blk[r], collection.candidates, X, norm)

    edges = np.linspace(1.0, 1.0 + epsilon, HISTOGRAM_BINS + 1)
    core, _ = np.histogram(factors[(factors >= 1.0) & (factors <= 1.0 + epsilon)], bins=edges)
    hist = np.concatenate([[int((factors < 1.0).sum())], core,
                           [int((factors > 1.0 + epsilon).sum())]])
    arg = int(factors.argmax())
    max_factor = float(factors[arg])
    return ProbeReport(
        epsilon=epsilon, seed=seed, num_probes=num_probes, class_counts=counts,
        max_factor=max_factor, argmax_probe=probes[arg],
        witness_index=int(witnesses[arg]),
        witness=collection.candidates[int(witnesses[arg])],
        histogram_edges=edges, histogram_counts=hist,
        passed=max_factor <= (1.0 + epsilon) * (1.0 + REL_TOL),
        factors=factors, witnesses=witnesses,
    )
