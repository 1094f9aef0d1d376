# --------------------------------------------------------------------
# surface_map.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Saturday March 8, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Surface-aligned coordinates around a posed mesh.

A world point x is projected onto the mesh at a surface point s, and
described by the texture coordinate (u, v) of s and its signed height h
above the surface, normalized by the shell thickness h_max.  Projection
is dispersed: s is the point whose barycentrically interpolated vertex
normal line passes through x, so points on either side of an edge land
on different faces instead of collapsing onto the edge.

Every operation accepts one point (3,) or a batch (N, 3).
"""

import threading
import weakref
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import Tensor
from uvhfield.body_model import PosedMesh
from uvhfield.bvh import MeshBvh, brute_force_nearest, closest_point_on_triangles
from uvhfield.errors import ContractViolation, ProjectionError
from uvhfield.events import EventBus, Events
from uvhfield.typedefs import Array, BoolArray, IntArray

# --------------------------------------------------------------------
DEFAULT_H_MAX = 0.10
NEWTON_STEPS = 16
NEWTON_TOL = 1e-7
BARY_SLACK = 1e-6
UNIT_TOL = 1e-6

# Prisms are swept further than h_max along the vertex normals, since
# the interpolated normal is shorter than unit length inside a face.
PRISM_REACH = 1.5
PRISM_PAD = 0.25


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SurfacePoint:
    face: IntArray
    barycentric: Array
    position: Array
    uv: Array
    normal: Array
    tangent: Array
    bitangent: Array
    distance: Array

    def __len__(self):
        return len(self.face)

    @property
    def frame(self) -> tuple[Array, Array, Array]:
        return self.normal, self.tangent, self.bitangent

    def take(self, index) -> "SurfacePoint":
        return SurfacePoint(**{f.name: getattr(self, f.name)[index] for f in fields(self)})

    def squeeze(self) -> "SurfacePoint":
        return self.take(0)


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class UvhCoord:
    u: Array
    v: Array
    h: Array

    def as_array(self) -> Array:
        return np.stack([self.u, self.v, self.h], axis=-1)


# --------------------------------------------------------------------
def _dot(a: Array, b: Array) -> Array:
    return np.sum(a * b, axis=-1)


# --------------------------------------------------------------------
def _unit(a: Array, eps=1e-20) -> Array:
    length = np.linalg.norm(a, axis=-1, keepdims=True)
    return a / np.maximum(length, eps)


# --------------------------------------------------------------------
def uv_tangents(tris: Array, face_uv: Array) -> Array:
    """
    dx/du of each face, from its texture mapping.  Faces with a
    degenerate uv triangle use their first edge instead.
    """
    e1 = tris[:, 1] - tris[:, 0]
    e2 = tris[:, 2] - tris[:, 0]
    d1 = face_uv[:, 1] - face_uv[:, 0]
    d2 = face_uv[:, 2] - face_uv[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    ok = np.abs(det) > 1e-14
    safe = np.where(ok, det, 1.0)
    T = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) / safe[:, None]
    return np.where(ok[:, None], T, e1)


# --------------------------------------------------------------------
class SurfaceIndex:
    """
    Per-frame acceleration structures for one posed mesh: a BVH over the
    triangles for nearest-point queries and another over the normal
    prisms for dispersed-projection candidates.  Immutable once built.
    """

    def __init__(self, posed: PosedMesh, h_max: float = DEFAULT_H_MAX):
        self.posed = posed
        self.h_max = float(h_max)
        faces = posed.faces
        self.tris = posed.vertices[faces]
        self.tri_normals = posed.vertex_normals[faces]
        self.face_uv = posed.template.uv
        self.charts = posed.template.charts
        self.tangents = uv_tangents(self.tris, self.face_uv)

        self.tri_bvh = MeshBvh.from_triangles(self.tris)
        reach = PRISM_REACH * self.h_max * self.tri_normals
        swept = np.concatenate([self.tris, self.tris + reach, self.tris - reach], axis=1)
        pad = PRISM_PAD * self.h_max
        self.prism_bvh = MeshBvh(swept.min(axis=1) - pad, swept.max(axis=1) + pad)

        lo, hi = posed.bounds()
        self.lo, self.hi = lo - self.h_max, hi + self.h_max

    # ----------------------------------------------------------------
    def nearest(self, points: Array, max_dist: Optional[float] = None):
        return self.tri_bvh.nearest(points, max_dist=max_dist)

    def shell(self, points: Array) -> BoolArray:
        """True where the unsigned distance to the mesh is at most h_max."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        inside = np.zeros(len(points), dtype=bool)
        near_box = np.all((points >= self.lo) & (points <= self.hi), axis=1)
        idx = np.flatnonzero(near_box)
        if idx.size:
            face, _, _ = self.nearest(points[idx], max_dist=self.h_max)
            inside[idx] = face >= 0
        return inside

    # ----------------------------------------------------------------
    def interpolate(self, face: IntArray, bary: Array) -> tuple[Array, Array, Array]:
        """Position, interpolated (unnormalized) normal and uv at barycentrics."""
        w = bary[:, :, None]
        pos = np.sum(w * self.tris[face], axis=1)
        nrm = np.sum(w * self.tri_normals[face], axis=1)
        uv = np.sum(w * self.face_uv[face], axis=1)
        return pos, nrm, uv

    def surface_points(self, points: Array, face: IntArray, bary: Array) -> SurfacePoint:
        pos, nrm, uv = self.interpolate(face, bary)
        n = _unit(nrm)
        T = self.tangents[face]
        t = T - _dot(T, n)[:, None] * n
        weak = np.linalg.norm(t, axis=1) < 1e-12
        if np.any(weak):
            e = self.tris[face[weak], 1] - self.tris[face[weak], 0]
            t[weak] = e - _dot(e, n[weak])[:, None] * n[weak]
        t = _unit(t)
        b = np.cross(n, t)
        diff = points - pos
        dist = np.linalg.norm(diff, axis=1)
        signed = np.where(_dot(diff, nrm) < 0, -dist, dist)
        return SurfacePoint(
            face=face,
            barycentric=bary,
            position=pos,
            uv=uv,
            normal=n,
            tangent=t,
            bitangent=b,
            distance=signed,
        )

    # ----------------------------------------------------------------
    def _newton(self, points: Array, q: IntArray, f: IntArray):
        """
        Solve s(b) + h n(b) = x for (b1, b2, h) on every candidate pair.
        Returns barycentrics, h and a convergence mask per pair.
        """
        x = points[q]
        p0, p1, p2 = self.tris[f, 0], self.tris[f, 1], self.tris[f, 2]
        n0, n1, n2 = self.tri_normals[f, 0], self.tri_normals[f, 1], self.tri_normals[f, 2]
        e1, e2 = p1 - p0, p2 - p0
        dn1, dn2 = n1 - n0, n2 - n0

        _, bary = closest_point_on_triangles(x, self.tris[f])
        b1, b2 = bary[:, 1].copy(), bary[:, 2].copy()
        nb = n0 + b1[:, None] * dn1 + b2[:, None] * dn2
        s = p0 + b1[:, None] * e1 + b2[:, None] * e2
        h = _dot(x - s, nb) / np.maximum(_dot(nb, nb), 1e-30)

        converged = np.zeros(len(q), dtype=bool)
        ok = np.ones(len(q), dtype=bool)
        for _ in range(NEWTON_STEPS):
            nb = n0 + b1[:, None] * dn1 + b2[:, None] * dn2
            s = p0 + b1[:, None] * e1 + b2[:, None] * e2
            F = s + h[:, None] * nb - x
            converged = np.linalg.norm(F, axis=1) <= NEWTON_TOL
            active = ok & ~converged
            if not np.any(active):
                break
            J = np.stack(
                [e1 + h[:, None] * dn1, e2 + h[:, None] * dn2, nb], axis=2
            )[active]
            det = np.linalg.det(J)
            good = np.abs(det) > 1e-18
            step = np.zeros((int(active.sum()), 3))
            if np.any(good):
                step[good] = np.linalg.solve(J[good], -F[active][good][:, :, None])[:, :, 0]
            idx = np.flatnonzero(active)
            ok[idx[~good]] = False
            b1[idx] += step[:, 0]
            b2[idx] += step[:, 1]
            h[idx] += step[:, 2]
        else:
            nb = n0 + b1[:, None] * dn1 + b2[:, None] * dn2
            s = p0 + b1[:, None] * e1 + b2[:, None] * e2
            converged = np.linalg.norm(s + h[:, None] * nb - x, axis=1) <= NEWTON_TOL

        converged &= ok & np.isfinite(h)
        bary = np.stack([1.0 - b1 - b2, b1, b2], axis=1)
        return bary, h, converged

    def dispersed(
        self, points: Array, fallback: bool = True
    ) -> tuple[SurfacePoint, BoolArray, BoolArray]:
        """
        Batch dispersed projection.  Returns the surface points, a mask of
        points that were resolved at all, and a mask of points that fell
        back to the nearest point.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        face = np.zeros(n, dtype=np.int64)
        bary = np.zeros((n, 3))
        found = np.zeros(n, dtype=bool)

        q, f = self.prism_bvh.query_points(points)
        if q.size:
            cand_bary, h, converged = self._newton(points, q, f)
            inside = np.all(cand_bary >= -BARY_SLACK, axis=1) & converged
            q, f, cand_bary, h = q[inside], f[inside], cand_bary[inside], h[inside]
            _, nb, _ = self.interpolate(f, np.clip(cand_bary, 0.0, None))
            height = np.abs(h) * np.linalg.norm(nb, axis=1)
            order = np.lexsort((f, height, q))
            q, f, cand_bary = q[order], f[order], cand_bary[order]
            first = np.ones(len(q), dtype=bool)
            first[1:] = q[1:] != q[:-1]
            q, f, cand_bary = q[first], f[first], cand_bary[first]
            cand_bary = np.clip(cand_bary, 0.0, None)
            cand_bary /= cand_bary.sum(axis=1, keepdims=True)
            face[q], bary[q], found[q] = f, cand_bary, True

        fell_back = np.zeros(n, dtype=bool)
        missing = np.flatnonzero(~found)
        if missing.size and fallback:
            fb_face, _, fb_bary = self.nearest(points[missing])
            face[missing], bary[missing] = fb_face, fb_bary
            found[missing] = True
            fell_back[missing] = True
            EventBus.get().count("projection.fallback", missing.size)

        return self.surface_points(points, face, bary), found, fell_back


# --------------------------------------------------------------------
_index_cache: "weakref.WeakKeyDictionary[PosedMesh, dict[float, SurfaceIndex]]" = (
    weakref.WeakKeyDictionary()
)
_index_lock = threading.Lock()


# --------------------------------------------------------------------
def surface_index(posed: PosedMesh, h_max: float = DEFAULT_H_MAX) -> SurfaceIndex:
    """The cached SurfaceIndex of a posed mesh, built on first use."""
    with _index_lock:
        per_mesh = _index_cache.setdefault(posed, {})
        index = per_mesh.get(float(h_max))
    if index is None:
        index = SurfaceIndex(posed, h_max)
        with _index_lock:
            index = per_mesh.setdefault(float(h_max), index)
    return index


# --------------------------------------------------------------------
def _batch(x) -> tuple[Array, bool]:
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(-1, 3), arr.ndim == 1


# --------------------------------------------------------------------
def nearest_point_oracle(
    x, posed: PosedMesh, use_bvh: bool = False, h_max: float = DEFAULT_H_MAX
) -> SurfacePoint:
    """
    Globally nearest surface point.  The brute-force scan is the
    reference; `use_bvh` answers the same query through the tree.
    """
    points, single = _batch(x)
    index = surface_index(posed, h_max)
    if use_bvh:
        face, _, bary = index.nearest(points)
    else:
        face, _, bary = brute_force_nearest(points, index.tris)
    sp = index.surface_points(points, face, bary)
    return sp.squeeze() if single else sp


# --------------------------------------------------------------------
def dispersed_project(
    x, posed: PosedMesh, h_max: float = DEFAULT_H_MAX, fallback: bool = True
) -> SurfacePoint:
    points, single = _batch(x)
    sp, found, _ = surface_index(posed, h_max).dispersed(points, fallback=fallback)
    if not np.all(found):
        raise ProjectionError(int(np.sum(~found)))
    return sp.squeeze() if single else sp


# --------------------------------------------------------------------
def to_uvh(
    x, posed: PosedMesh, h_max: float = DEFAULT_H_MAX, dispersed: bool = True, fallback: bool = True
) -> tuple[UvhCoord, SurfacePoint]:
    """
    (u, v, h) of x: uv of the projected surface point and the signed
    distance to it over h_max, clipped to [-1, 1].  Near ridges the
    projected distance of a point inside the shell can exceed h_max.
    """
    points, single = _batch(x)
    if dispersed:
        sp = dispersed_project(points, posed, h_max, fallback)
    else:
        sp = nearest_point_oracle(points, posed, use_bvh=True, h_max=h_max)
    uvh = UvhCoord(sp.uv[:, 0], sp.uv[:, 1], np.clip(sp.distance / h_max, -1.0, 1.0))
    if single:
        return UvhCoord(uvh.u[0], uvh.v[0], uvh.h[0]), sp.squeeze()
    return uvh, sp


# --------------------------------------------------------------------
def shell_test(x, posed: PosedMesh, h_max: float = DEFAULT_H_MAX):
    """Whether x lies within h_max of the surface, boundary included."""
    points, single = _batch(x)
    inside = surface_index(posed, h_max).shell(points)
    return bool(inside[0]) if single else inside


# --------------------------------------------------------------------
def local_view_dir(d, frame: tuple[Array, Array, Array]) -> Array:
    """
    Direction d in the local (tangent, bitangent, normal) coordinates
    of `frame`, given as (normal, tangent, bitangent).
    """
    d = np.asarray(d, dtype=np.float64)
    length = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(length - 1.0) > UNIT_TOL):
        raise ContractViolation("view direction is not unit length")
    n, t, b = (np.asarray(v, dtype=np.float64) for v in frame)
    return np.stack([_dot(d, t), _dot(d, b), _dot(d, n)], axis=-1)


# --------------------------------------------------------------------
def differentiable_uvh(
    points: Array,
    sp: SurfacePoint,
    index: SurfaceIndex,
    fell_back: BoolArray,
    vertices: Optional[Tensor] = None,
    normals: Optional[Tensor] = None,
) -> Tensor:
    """
    (u, v, h) as a tensor connected to the posed vertex and normal
    tensors, holding the face choice fixed.

    For dispersed hits one Newton step is replayed on the tape from the
    converged solution with the inverse Jacobian held constant: the value
    is unchanged and its derivative is the implicit-function derivative
    of the projection.  Fallback hits keep their barycentrics fixed.
    """
    h_max = index.h_max
    face = sp.face
    numeric = np.stack([sp.uv[:, 0], sp.uv[:, 1], np.clip(sp.distance / h_max, -1.0, 1.0)], axis=1)
    live = (vertices is not None and vertices.requires_grad) or (
        normals is not None and normals.requires_grad
    )
    if not live or len(face) == 0:
        return ad.Tensor(numeric.astype(ad.default_dtype()))

    faces = index.posed.faces[face]
    V = vertices if vertices is not None else ad.as_tensor(index.posed.vertices)
    N = normals if normals is not None else ad.as_tensor(index.posed.vertex_normals)
    p0, p1, p2 = (ad.gather_rows(V, faces[:, k]) for k in range(3))
    n0, n1, n2 = (ad.gather_rows(N, faces[:, k]) for k in range(3))

    bary = sp.barycentric
    b1c, b2c = bary[:, 1:2], bary[:, 2:3]
    pos_n, nrm_n, _ = index.interpolate(face, bary)
    h_c = (sp.distance / np.maximum(np.linalg.norm(nrm_n, axis=1), 1e-30))[:, None]

    e1, e2 = p1 - p0, p2 - p0
    dn1, dn2 = n1 - n0, n2 - n0
    nb = n0 + b1c * dn1 + b2c * dn2
    s = p0 + b1c * e1 + b2c * e2
    F = s + h_c * nb - points

    J = np.stack(
        [
            (index.tris[face, 1] - index.tris[face, 0])
            + h_c * (index.tri_normals[face, 1] - index.tri_normals[face, 0]),
            (index.tris[face, 2] - index.tris[face, 0])
            + h_c * (index.tri_normals[face, 2] - index.tri_normals[face, 0]),
            nrm_n,
        ],
        axis=2,
    )
    det = np.linalg.det(J)
    solvable = (np.abs(det) > 1e-18) & ~fell_back
    J_inv = np.zeros_like(J)
    if np.any(solvable):
        J_inv[solvable] = np.linalg.inv(J[solvable])
    step = ad.reshape(
        ad.matmul(J_inv, ad.reshape(F, (len(face), 3, 1))), (len(face), 3)
    )
    z = np.concatenate([b1c, b2c, h_c], axis=1) - step
    b1, b2, h = z[:, 0:1], z[:, 1:2], z[:, 2:3]
    b0 = 1.0 - b1 - b2

    uv = index.face_uv[face]
    uv_t = b0 * uv[:, 0] + b1 * uv[:, 1] + b2 * uv[:, 2]
    nb_t = n0 + b1 * dn1 + b2 * dn2
    height_dispersed = h * ad.norm(nb_t, keepdims=True, eps=1e-30)

    # Fallback rows: fixed barycentrics, exact signed distance.
    diff = points - s
    sign = np.where(sp.distance < 0, -1.0, 1.0)[:, None]
    height_nearest = sign * ad.norm(diff, keepdims=True, eps=1e-30)
    height = ad.where(solvable[:, None], height_dispersed, height_nearest)
    uv_fixed = np.sum(bary[:, :, None] * uv, axis=1)
    uv_t = ad.where(solvable[:, None], uv_t, uv_fixed)

    return ad.concat([uv_t, ad.clip(height * (1.0 / h_max), -1.0, 1.0)], axis=1)


# --------------------------------------------------------------------
def seam_statistics(faces: IntArray, charts: IntArray) -> dict[str, float]:
    """
    Chart changes between consecutive in-shell samples along rays.

    `faces` is (rays, samples) with -1 where the sample was culled.
    Returns the number of consecutive in-shell sample pairs, how many of
    them change chart, and the fraction.
    """
    faces = np.asarray(faces)
    if faces.ndim == 1:
        faces = faces[None, :]
    a, b = faces[:, :-1], faces[:, 1:]
    both = (a >= 0) & (b >= 0)
    pairs = int(both.sum())
    if pairs == 0:
        return {"pairs": 0, "crossings": 0, "fraction": 0.0}
    ca = charts[np.where(both, a, 0)]
    cb = charts[np.where(both, b, 0)]
    crossings = int(np.sum(both & (ca != cb)))
    return {"pairs": pairs, "crossings": crossings, "fraction": crossings / pairs}


# --------------------------------------------------------------------
def emit_projection_failures(count: int):
    if count:
        EventBus.get().count("projection.failed", count)
        EventBus.get().emit(
            Events.DIAGNOSTIC, "surface_map", {"projection_failures": int(count)}
        )
