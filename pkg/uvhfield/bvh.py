# --------------------------------------------------------------------
# bvh.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Friday March 7, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Axis-aligned bounding volume hierarchy over boxes, with batched queries.

Queries walk the tree for a whole batch of points at once: the frontier
is a flat list of (query, node) pairs that is expanded one level per
iteration.  A built tree is never modified, so any number of threads
may query it concurrently.
"""

from typing import Optional

import numpy as np

from uvhfield.typedefs import Array, IntArray

# --------------------------------------------------------------------
LEAF_SIZE = 4
_PRUNE_SLACK = 1e-12


# --------------------------------------------------------------------
def _dot(a: Array, b: Array) -> Array:
    return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]


# --------------------------------------------------------------------
def closest_point_on_triangles(p: Array, tri: Array) -> tuple[Array, Array]:
    """
    Closest points on triangles `tri` (..., 3, 3) to points `p` (..., 3),
    broadcasting.  Returns squared distances and barycentric weights.

    Region tests follow the usual Voronoi-region walk: vertices first,
    then edges, then the interior.
    """
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        v_in = vb * denom
        w_in = vc * denom

    shape = np.broadcast_shapes(d1.shape, va.shape)
    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    on_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    in_c = (d6 >= 0) & (d5 <= d6)
    on_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    on_bc = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    one, zero = np.ones(shape), np.zeros(shape)
    conds = [in_a, in_b, on_ab, in_c, on_ac, on_bc]
    b1 = np.select(conds, [zero, one, t_ab, zero, zero, 1 - t_bc], v_in)
    b2 = np.select(conds, [zero, zero, zero, one, t_ac, t_bc], w_in)
    b1 = np.nan_to_num(b1)
    b2 = np.nan_to_num(b2)
    b0 = 1.0 - b1 - b2
    bary = np.stack([b0, b1, b2], axis=-1)

    q = b0[..., None] * a + b1[..., None] * b + b2[..., None] * c
    diff = p - q
    return _dot(diff, diff), bary


# --------------------------------------------------------------------
def ragged_arange(counts: IntArray) -> IntArray:
    total = int(counts.sum())
    starts = np.cumsum(counts) - counts
    return np.arange(total) - np.repeat(starts, counts)


# --------------------------------------------------------------------
class MeshBvh:
    def __init__(self, lo: Array, hi: Array, leaf_size: int = LEAF_SIZE):
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        self.n_prims = len(lo)
        self.leaf_size = leaf_size
        self.prim_lo, self.prim_hi = lo, hi
        self.tris: Optional[Array] = None
        self._build(lo, hi)
        for arr in (self.node_lo, self.node_hi, self.left, self.right, self.start, self.count, self.order):
            arr.setflags(write=False)

    @classmethod
    def from_triangles(cls, tris: Array, pad: float = 0.0) -> "MeshBvh":
        tris = np.asarray(tris, dtype=np.float64)
        lo, hi = tris.min(axis=1), tris.max(axis=1)
        scale = float(np.abs(tris).max()) if tris.size else 1.0
        pad = pad + 1e-9 * max(scale, 1.0)
        bvh = cls(lo - pad, hi + pad)
        bvh.tris = tris
        return bvh

    # ----------------------------------------------------------------
    def _build(self, lo: Array, hi: Array):
        centers = 0.5 * (lo + hi)
        order = np.arange(self.n_prims)
        node_lo, node_hi, left, right, start, count = [], [], [], [], [], []

        def new_node(idx: IntArray) -> int:
            node_lo.append(lo[idx].min(axis=0) if idx.size else np.zeros(3))
            node_hi.append(hi[idx].max(axis=0) if idx.size else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(0)
            count.append(0)
            return len(node_lo) - 1

        stack = [(new_node(order), 0, self.n_prims)]
        while stack:
            node, begin, end = stack.pop()
            idx = order[begin:end]
            if end - begin <= self.leaf_size:
                start[node], count[node] = begin, end - begin
                continue
            c = centers[idx]
            axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
            mid = (end - begin) // 2
            part = np.argsort(c[:, axis], kind="stable")
            order[begin:end] = idx[part]
            l_node = new_node(order[begin : begin + mid])
            r_node = new_node(order[begin + mid : end])
            left[node], right[node] = l_node, r_node
            stack.append((l_node, begin, begin + mid))
            stack.append((r_node, begin + mid, end))

        self.node_lo = np.array(node_lo, dtype=np.float64).reshape(-1, 3)
        self.node_hi = np.array(node_hi, dtype=np.float64).reshape(-1, 3)
        self.left = np.array(left, dtype=np.int64)
        self.right = np.array(right, dtype=np.int64)
        self.start = np.array(start, dtype=np.int64)
        self.count = np.array(count, dtype=np.int64)
        self.order = order

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    def is_leaf(self, nodes: IntArray) -> np.ndarray:
        return self.left[nodes] < 0

    def leaf_prims(self, node: int) -> IntArray:
        return self.order[self.start[node] : self.start[node] + self.count[node]]

    def box_dist2(self, points: Array, nodes: IntArray) -> Array:
        lo, hi = self.node_lo[nodes], self.node_hi[nodes]
        gap = np.maximum(np.maximum(lo - points, 0.0), points - hi)
        return _dot(gap, gap)

    def bounds(self) -> tuple[Array, Array]:
        return self.node_lo[0], self.node_hi[0]

    # ----------------------------------------------------------------
    def _expand_leaves(self, qs: IntArray, nodes: IntArray) -> tuple[IntArray, IntArray]:
        counts = self.count[nodes]
        pq = np.repeat(qs, counts)
        prims = self.order[np.repeat(self.start[nodes], counts) + ragged_arange(counts)]
        return pq, prims

    def query_points(self, points: Array) -> tuple[IntArray, IntArray]:
        """
        All (query, primitive) pairs whose box contains the point,
        boundaries included.  Pairs are sorted by query, then primitive.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        out_q, out_p = [], []
        if self.n_prims == 0:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        qs = np.arange(len(points))
        nodes = np.zeros(len(points), dtype=np.int64)
        while qs.size:
            p = points[qs]
            inside = np.all(
                (p >= self.node_lo[nodes]) & (p <= self.node_hi[nodes]), axis=1
            )
            qs, nodes = qs[inside], nodes[inside]
            leaf = self.is_leaf(nodes)
            if np.any(leaf):
                pq, prims = self._expand_leaves(qs[leaf], nodes[leaf])
                out_q.append(pq)
                out_p.append(prims)
            iq, inode = qs[~leaf], nodes[~leaf]
            qs = np.concatenate([iq, iq])
            nodes = np.concatenate([self.left[inode], self.right[inode]])

        if not out_q:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        q, prims = np.concatenate(out_q), np.concatenate(out_p)
        # Leaf boxes are unions; keep only prims whose own box holds the point.
        p = points[q]
        hit = np.all((p >= self.prim_lo[prims]) & (p <= self.prim_hi[prims]), axis=1)
        q, prims = q[hit], prims[hit]
        sel = np.lexsort((prims, q))
        return q[sel], prims[sel]

    # ----------------------------------------------------------------
    def _update_best(self, points, pq, prims, best_d, best_f, best_b):
        if pq.size == 0:
            return
        d2, bary = closest_point_on_triangles(points[pq], self.tris[prims])
        sel = np.lexsort((prims, d2, pq))
        pq, prims, d2, bary = pq[sel], prims[sel], d2[sel], bary[sel]
        first = np.ones(len(pq), dtype=bool)
        first[1:] = pq[1:] != pq[:-1]
        pq, prims, d2, bary = pq[first], prims[first], d2[first], bary[first]
        better = (d2 < best_d[pq]) | ((d2 == best_d[pq]) & (prims < best_f[pq]))
        q = pq[better]
        best_d[q] = d2[better]
        best_f[q] = prims[better]
        best_b[q] = bary[better]

    def nearest(
        self, points: Array, max_dist: Optional[float] = None
    ) -> tuple[IntArray, Array, Array]:
        """
        Nearest triangle to each point.  Returns face index, squared
        distance and barycentric weights.  With `max_dist`, points with no
        triangle within that distance (inclusive) get face -1 and an
        infinite distance.  Ties go to the lowest face index.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        best_d = np.full(n, np.inf)
        best_f = np.full(n, -1, dtype=np.int64)
        best_b = np.zeros((n, 3))
        if self.n_prims == 0 or n == 0:
            return best_f, best_d, best_b
        if self.tris is None:
            raise ValueError("nearest() needs a tree built with from_triangles().")

        limit = np.inf if max_dist is None else float(max_dist) ** 2
        qs = np.arange(n)

        if max_dist is None:
            # Greedy descent to one leaf for an initial upper bound.
            nodes = np.zeros(n, dtype=np.int64)
            while True:
                inner = ~self.is_leaf(nodes)
                if not np.any(inner):
                    break
                i = np.flatnonzero(inner)
                l_node, r_node = self.left[nodes[i]], self.right[nodes[i]]
                dl = self.box_dist2(points[i], l_node)
                dr = self.box_dist2(points[i], r_node)
                nodes[i] = np.where(dl <= dr, l_node, r_node)
            pq, prims = self._expand_leaves(qs, nodes)
            self._update_best(points, pq, prims, best_d, best_f, best_b)

        nodes = np.zeros(n, dtype=np.int64)
        while qs.size:
            bd = self.box_dist2(points[qs], nodes)
            bound = np.minimum(best_d[qs], limit)
            keep = bd <= bound * (1 + _PRUNE_SLACK) + 1e-300
            qs, nodes = qs[keep], nodes[keep]
            leaf = self.is_leaf(nodes)
            if np.any(leaf):
                pq, prims = self._expand_leaves(qs[leaf], nodes[leaf])
                self._update_best(points, pq, prims, best_d, best_f, best_b)
            iq, inode = qs[~leaf], nodes[~leaf]
            qs = np.concatenate([iq, iq])
            nodes = np.concatenate([self.left[inode], self.right[inode]])

        if max_dist is not None:
            outside = best_d > limit
            best_d[outside] = np.inf
            best_f[outside] = -1
            best_b[outside] = 0.0
        return best_f, best_d, best_b


# --------------------------------------------------------------------
def brute_force_nearest(
    points: Array, tris: Array, chunk: int = 256
) -> tuple[IntArray, Array, Array]:
    """Nearest triangle by scanning every face; the reference for `MeshBvh.nearest()`."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    faces = np.zeros(n, dtype=np.int64)
    dist2 = np.zeros(n)
    bary = np.zeros((n, 3))
    for begin in range(0, n, chunk):
        p = points[begin : begin + chunk]
        d2, b = closest_point_on_triangles(p[:, None, :], tris[None, :, :, :])
        best = np.argmin(d2, axis=1)
        rows = np.arange(len(p))
        faces[begin : begin + chunk] = best
        dist2[begin : begin + chunk] = d2[rows, best]
        bary[begin : begin + chunk] = b[rows, best]
    return faces, dist2, bary
