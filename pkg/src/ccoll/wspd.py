"""Fair split tree and well-separated pair decomposition.

The tree stores nodes as parallel arrays over a single index
permutation, so a node's point set is a contiguous slice and pair sides
never need materializing.  Separation tests use certified bounds: a box
gap as the distance lower bound and a box diagonal as the diameter
upper bound, so emitted pairs satisfy the separation property under the
true norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError
from .metric import NormSpec, PointSet, norms, set_diameter, set_distance


class SplitTree:
    """Midpoint split on the longest box axis, one point per leaf."""

    __slots__ = ("points", "order", "lo", "hi", "start", "end", "left", "right", "rep")

    def __init__(self, points, order, lo, hi, start, end, left, right, rep):
        self.points = points
        self.order = order
        self.lo = lo
        self.hi = hi
        self.start = start
        self.end = end
        self.left = left
        self.right = right
        self.rep = rep

    @property
    def node_count(self) -> int:
        return len(self.start)

    @property
    def n(self) -> int:
        return len(self.order)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def indices(self, node: int) -> np.ndarray:
        """Original point indices under this node."""
        return self.order[self.start[node]:self.end[node]]

    def node_points(self, node: int) -> np.ndarray:
        return self.points[self.indices(node)]


def build_split_tree(X: PointSet) -> SplitTree:
    pts = X.coords
    n = X.n
    order = np.arange(n)
    lo, hi, start, end, left, right, rep = [], [], [], [], [], [], []

    def new_node(s: int, e: int) -> int:
        sub = pts[order[s:e]]
        lo.append(sub.min(axis=0))
        hi.append(sub.max(axis=0))
        start.append(s)
        end.append(e)
        left.append(-1)
        right.append(-1)
        rep.append(int(order[s:e].min()))
        return len(start) - 1

    root = new_node(0, n)
    stack = [root]
    while stack:
        node = stack.pop()
        s, e = start[node], end[node]
        if e - s == 1:
            continue
        ext = hi[node] - lo[node]
        ax = int(np.argmax(ext))
        mid = 0.5 * (lo[node][ax] + hi[node][ax])
        seg = order[s:e]
        mask = pts[seg, ax] <= mid
        # A float midpoint of nearly-equal bounds can land on min or max
        # and leave one side empty; fall back to a stable median split.
        if mask.all() or not mask.any():
            key = np.argsort(pts[seg, ax], kind="stable")
            half = (e - s) // 2
            seg[:] = seg[key]
            cut = s + half
        else:
            seg[:] = np.concatenate([seg[mask], seg[~mask]])
            cut = s + int(mask.sum())
        left[node] = new_node(s, cut)
        right[node] = new_node(cut, e)
        stack.append(right[node])
        stack.append(left[node])

    return SplitTree(
        pts, order,
        np.asarray(lo), np.asarray(hi),
        np.asarray(start), np.asarray(end),
        np.asarray(left), np.asarray(right), np.asarray(rep),
    )


@dataclass
class WspdSet:
    """A t-WSPD: pairs of tree nodes with lowest-index representatives."""

    tree: SplitTree
    t: float
    a_nodes: np.ndarray
    b_nodes: np.ndarray
    a_reps: np.ndarray
    b_reps: np.ndarray

    @property
    def size(self) -> int:
        return len(self.a_nodes)

    def sides(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        return self.tree.indices(self.a_nodes[k]), self.tree.indices(self.b_nodes[k])


def _diam_upper_bounds(tree: SplitTree, norm: NormSpec) -> np.ndarray:
    ext = tree.hi - tree.lo
    if norm.kind == "blackbox":
        return norm.c_high * ext.max(axis=1)
    return norms(ext, norm)


def extract_wspd(tree: SplitTree, t: float, norm: NormSpec) -> WspdSet:
    """Emit separated node pairs, splitting the larger-diameter side otherwise.

    The distance lower bound is the box gap (sup-norm gap scaled by
    c_low for black-box norms, the exact lp box gap otherwise), so the
    separation property holds under the true norm at the cost of a few
    extra pairs.
    """
    if t < 1.0:
        raise InputError(f"separation t must be >= 1, got {t}")
    diam = _diam_upper_bounds(tree, norm)
    lo, hi = tree.lo, tree.hi
    left, right = tree.left, tree.right
    d = lo.shape[1]
    p = norm.p
    blackbox = norm.kind == "blackbox"
    c_low = norm.constants(d)[0]

    out_a: list[int] = []
    out_b: list[int] = []
    stack: list[tuple[int, int]] = []
    # one (left, right) seed per internal node, root last so it pops first
    for node in range(tree.node_count - 1, -1, -1):
        if left[node] >= 0:
            stack.append((left[node], right[node]))

    while stack:
        u, v = stack.pop()
        gap = 0.0
        if blackbox or math.isinf(p):
            for ax in range(d):
                g = max(lo[v, ax] - hi[u, ax], lo[u, ax] - hi[v, ax], 0.0)
                if g > gap:
                    gap = g
            if blackbox:
                gap *= c_low
        elif p == 2.0:
            acc = 0.0
            for ax in range(d):
                g = max(lo[v, ax] - hi[u, ax], lo[u, ax] - hi[v, ax], 0.0)
                acc += g * g
            gap = math.sqrt(acc)
        else:
            acc = 0.0
            for ax in range(d):
                g = max(lo[v, ax] - hi[u, ax], lo[u, ax] - hi[v, ax], 0.0)
                acc += g ** p
            gap = acc ** (1.0 / p)

        du, dv = diam[u], diam[v]
        if gap >= t * (du if du >= dv else dv):
            out_a.append(u)
            out_b.append(v)
            continue
        if du >= dv and left[u] >= 0 or left[v] < 0:
            stack.append((left[u], v))
            stack.append((right[u], v))
        else:
            stack.append((u, left[v]))
            stack.append((u, right[v]))

    a_nodes = np.asarray(out_a, dtype=np.int64)
    b_nodes = np.asarray(out_b, dtype=np.int64)
    return WspdSet(
        tree=tree, t=float(t),
        a_nodes=a_nodes, b_nodes=b_nodes,
        a_reps=tree.rep[a_nodes] if len(a_nodes) else np.empty(0, dtype=np.int64),
        b_reps=tree.rep[b_nodes] if len(b_nodes) else np.empty(0, dtype=np.int64),
    )


@dataclass
class WspdValidation:
    subsets_ok: bool
    disjoint_ok: bool
    coverage_ok: bool
    separation_ok: bool
    counterexample: Optional[str] = None
    checked_pairs: int = 0

    @property
    def ok(self) -> bool:
        return self.subsets_ok and self.disjoint_ok and self.coverage_ok and self.separation_ok


def validate_wspd(wspd: WspdSet, X: PointSet, t: float, norm: NormSpec,
                  max_n: int = 2000) -> WspdValidation:
    """Brute-force check of the four WSPD properties; quadratic in n."""
    n = X.n
    if n > max_n:
        raise InputError(f"validate_wspd is quadratic; refusing n={n} > {max_n}")
    report = WspdValidation(True, True, True, True, checked_pairs=wspd.size)
    covered = np.zeros((n, n), dtype=bool)
    np.fill_diagonal(covered, True)
    for k in range(wspd.size):
        ia, ib = wspd.sides(k)
        if len(ia) == 0 or len(ib) == 0 or ia.min() < 0 or ib.min() < 0 \
                or ia.max() >= n or ib.max() >= n:
            report.subsets_ok = False
            report.counterexample = f"pair {k}: side indices outside X"
            return report
        if np.intersect1d(ia, ib).size:
            report.disjoint_ok = False
            report.counterexample = f"pair {k}: sides intersect"
            return report
        dist = set_distance(X.coords[ia], X.coords[ib], norm)
        dm = max(set_diameter(X.coords[ia], norm), set_diameter(X.coords[ib], norm))
        if dist < t * dm * (1 - 1e-12):
            report.separation_ok = False
            report.counterexample = (
                f"pair {k}: dist={dist:.6g} < t*max(diam)={t * dm:.6g}"
            )
            return report
        covered[np.ix_(ia, ib)] = True
        covered[np.ix_(ib, ia)] = True
    if not covered.all():
        i, j = np.argwhere(~covered)[0]
        report.coverage_ok = False
        report.counterexample = f"point pair ({i},{j}) not covered by any A_k x B_k"
    return report
