# --------------------------------------------------------------------
# body_model.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Thursday March 6, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Skinned parametric body: forward kinematics, linear blend skinning with
a linear shape basis, and per-vertex normals.

The math runs through `autodiff` so that posed vertices can carry
gradients back to the pose when pose refinement is enabled.  Without an
active tape the same code evaluates eagerly on plain arrays.
"""

import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import Tensor
from uvhfield.container import read_container, write_container
from uvhfield.errors import ConfigurationError, DegenerateGeometryError, TemplateError
from uvhfield.typedefs import Array, IntArray, PathSpec

# --------------------------------------------------------------------
WEIGHT_TOLERANCE = 1e-6
TEMPLATE_KIND = "skinned-template"


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SkinnedTemplate:
    vertices: Array
    faces: IntArray
    uv: Array
    joints: Array
    parents: IntArray
    weights: Array
    shape_dirs: Optional[Array] = None
    joint_names: tuple[str, ...] = ()
    charts: Optional[IntArray] = None
    name: str = "template"

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64))
        object.__setattr__(self, "uv", np.asarray(self.uv, dtype=np.float64))
        object.__setattr__(self, "joints", np.asarray(self.joints, dtype=np.float64))
        object.__setattr__(self, "parents", np.asarray(self.parents, dtype=np.int64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        if self.shape_dirs is not None:
            object.__setattr__(
                self, "shape_dirs", np.asarray(self.shape_dirs, dtype=np.float64)
            )
        if self.charts is None:
            object.__setattr__(self, "charts", np.zeros(len(self.faces), dtype=np.int64))
        else:
            object.__setattr__(self, "charts", np.asarray(self.charts, dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def n_shape(self) -> int:
        return 0 if self.shape_dirs is None else self.shape_dirs.shape[2]

    def joint_shape_dirs(self) -> Optional[Array]:
        """
        Shape basis for the joints, the skinning-weight average of the
        vertex basis so that joints follow the surface they drive.
        """
        if self.shape_dirs is None:
            return None
        mass = self.weights.sum(axis=0)
        mass = np.where(mass > 0, mass, 1.0)
        dirs = np.einsum("vj,vds->jds", self.weights, self.shape_dirs)
        return dirs / mass[:, None, None]

    def validate(self, check_charts=True) -> "SkinnedTemplate":
        """Check the template invariants, raising TemplateError."""
        n_v, n_j = self.n_vertices, self.n_joints
        if self.vertices.shape != (n_v, 3):
            raise TemplateError("vertices must be an (V, 3) array")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise TemplateError("faces must be an (F, 3) array")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n_v):
            raise TemplateError("face index out of range")
        if self.uv.shape != (self.n_faces, 3, 2):
            raise TemplateError("uv must hold one 2D coordinate per face corner")
        if self.weights.shape != (n_v, n_j):
            raise TemplateError("weights must be a (V, J) array")
        if self.parents.shape != (n_j,):
            raise TemplateError("parents must hold one index per joint")
        if np.any(self.weights < 0):
            raise TemplateError("skinning weights must be non-negative")
        rows = self.weights.sum(axis=1)
        bad = np.flatnonzero(np.abs(rows - 1.0) > WEIGHT_TOLERANCE)
        if bad.size:
            raise TemplateError(
                "weights of vertex %d sum to %.9f, not 1" % (bad[0], rows[bad[0]])
            )
        for j, parent in enumerate(self.parents):
            if j == 0 and parent != -1:
                raise TemplateError("joint 0 must be the root")
            if j > 0 and not (0 <= parent < j):
                raise TemplateError(
                    "parent of joint %d is %d; joints must be topologically ordered"
                    % (j, parent)
                )
        if np.any(self.uv < 0) or np.any(self.uv > 1):
            raise TemplateError("uv coordinates must lie in [0, 1]")
        if self.shape_dirs is not None and self.shape_dirs.shape[:2] != (n_v, 3):
            raise TemplateError("shape_dirs must be a (V, 3, S) array")
        if check_charts:
            overlap = find_uv_overlap(self.uv)
            if overlap is not None:
                raise TemplateError(
                    "uv triangles of faces %d and %d overlap" % overlap
                )
        return self


# --------------------------------------------------------------------
def _sat_overlap(tri_a: Array, tri_b: Array, tol: float) -> np.ndarray:
    """
    Separating-axis test for batches of 2D triangles, (P, 3, 2) each.
    True where the interiors overlap by more than `tol`.
    """
    overlap = np.ones(len(tri_a), dtype=bool)
    for tri in (tri_a, tri_b):
        for i in range(3):
            edge = tri[:, (i + 1) % 3] - tri[:, i]
            axis = np.stack([-edge[:, 1], edge[:, 0]], axis=-1)
            length = np.linalg.norm(axis, axis=-1, keepdims=True)
            axis = axis / np.where(length > 0, length, 1.0)
            pa = np.einsum("pkd,pd->pk", tri_a, axis)
            pb = np.einsum("pkd,pd->pk", tri_b, axis)
            gap = np.minimum(pa.max(1), pb.max(1)) - np.maximum(pa.min(1), pb.min(1))
            overlap &= gap > tol
    return overlap


# --------------------------------------------------------------------
def find_uv_overlap(uv: Array, tol: float = 1e-9) -> Optional[tuple[int, int]]:
    """
    Return the first pair of faces whose uv triangles overlap, or None.
    Candidate pairs come from a uniform grid over the unit square.
    """
    n_faces = len(uv)
    if n_faces < 2:
        return None
    grid = max(1, int(np.ceil(np.sqrt(n_faces))))
    lo = np.clip(np.floor(uv.min(axis=1) * grid).astype(np.int64), 0, grid - 1)
    hi = np.clip(np.floor(uv.max(axis=1) * grid).astype(np.int64), 0, grid - 1)

    cells: dict[tuple[int, int], list[int]] = {}
    for f in range(n_faces):
        for cx in range(lo[f, 0], hi[f, 0] + 1):
            for cy in range(lo[f, 1], hi[f, 1] + 1):
                cells.setdefault((cx, cy), []).append(f)

    pairs = set()
    for members in cells.values():
        if len(members) > 1:
            pairs.update(itertools.combinations(members, 2))
    if not pairs:
        return None

    pair_arr = np.array(sorted(pairs), dtype=np.int64)
    hits = _sat_overlap(uv[pair_arr[:, 0]], uv[pair_arr[:, 1]], tol)
    if np.any(hits):
        a, b = pair_arr[np.argmax(hits)]
        return int(a), int(b)
    return None


# --------------------------------------------------------------------
def _wrap_axis_angle(aa: Array) -> Array:
    angle = np.linalg.norm(aa, axis=-1, keepdims=True)
    wrapped = np.mod(angle + np.pi, 2 * np.pi) - np.pi
    scale = np.divide(wrapped, angle, out=np.ones_like(angle), where=angle > np.pi)
    return aa * scale


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Pose:
    axis_angle: Array
    root_translation: Array = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        aa = np.asarray(self.axis_angle, dtype=np.float64).reshape(-1, 3)
        rt = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(aa)) and np.all(np.isfinite(rt))):
            raise ConfigurationError("pose", "pose parameters must be finite")
        object.__setattr__(self, "axis_angle", _wrap_axis_angle(aa))
        object.__setattr__(self, "root_translation", rt)

    @property
    def n_joints(self) -> int:
        return len(self.axis_angle)

    @classmethod
    def zeros(cls, n_joints: int) -> "Pose":
        return cls(np.zeros((n_joints, 3)), np.zeros(3))

    @classmethod
    def from_vector(cls, values) -> "Pose":
        """Inverse of `to_vector()`: J*3 axis-angle values then the root translation."""
        values = np.asarray(values, dtype=np.float64)
        return cls(values[:-3].reshape(-1, 3), values[-3:])

    def to_vector(self) -> Array:
        return np.concatenate([self.axis_angle.reshape(-1), self.root_translation])

    def to_list(self) -> list[float]:
        return [float(x) for x in self.to_vector()]

    def angle_error(self, other: "Pose") -> float:
        """L2 norm of the joint axis-angle difference."""
        return float(np.linalg.norm(self.axis_angle - other.axis_angle))


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Shape:
    coeffs: Array

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(coeffs)):
            raise ConfigurationError("shape", "shape coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, n: int) -> "Shape":
        return cls(np.zeros(n))

    def to_list(self) -> list[float]:
        return [float(x) for x in self.coeffs]


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class PosedMesh:
    vertices: Array
    faces: IntArray
    vertex_normals: Array
    joint_transforms: Array
    template: SkinnedTemplate
    vertices_t: Optional[Tensor] = None

    @property
    def differentiable(self) -> bool:
        return self.vertices_t is not None and self.vertices_t.requires_grad

    def bounds(self, pad: float = 0.0) -> tuple[Array, Array]:
        return self.vertices.min(axis=0) - pad, self.vertices.max(axis=0) + pad


# --------------------------------------------------------------------
def rodrigues(axis_angle: Array) -> Array:
    """Rotation matrices (..., 3, 3) from axis-angle vectors (..., 3)."""
    r = np.asarray(axis_angle, dtype=np.float64)
    a = np.linalg.norm(r, axis=-1)[..., None, None]
    safe = np.where(a > 0, a, 1.0)
    c1 = np.where(a > 1e-8, np.sin(a) / safe, 1.0)
    c2 = np.where(a > 1e-8, 2 * np.sin(a / 2) ** 2 / safe**2, 0.5)
    K = _skew(r)
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + c1 * K + c2 * (K @ K)


# --------------------------------------------------------------------
def _skew(r: Array) -> Array:
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    o = np.zeros_like(x)
    return np.stack(
        [np.stack([o, -z, y], -1), np.stack([z, o, -x], -1), np.stack([-y, x, o], -1)],
        axis=-2,
    )


# --------------------------------------------------------------------
def rodrigues_t(axis_angle: Tensor) -> Tensor:
    """Differentiable `rodrigues()` for a (J, 3) tensor."""
    r = axis_angle
    a = ad.reshape(ad.norm(r, keepdims=True, eps=1e-16), (r.shape[0], 1, 1))
    c1 = ad.sin(a) / a
    c2 = 2.0 * ad.sin(a * 0.5) ** 2 / (a * a)
    x, y, z = r[:, 0], r[:, 1], r[:, 2]
    o = x * 0.0
    K = ad.stack(
        [ad.stack([o, -z, y], -1), ad.stack([z, o, -x], -1), ad.stack([-y, x, o], -1)],
        axis=-2,
    )
    eye = np.broadcast_to(np.eye(3), K.shape)
    return eye + c1 * K + c2 * (K @ K)


# --------------------------------------------------------------------
def _shaped_rest(template: SkinnedTemplate, shape: Optional[Shape]) -> tuple[Array, Array]:
    verts, joints = template.vertices, template.joints
    if shape is None or template.shape_dirs is None or shape.coeffs.size == 0:
        return verts, joints
    if shape.coeffs.size != template.n_shape:
        raise ConfigurationError(
            "shape",
            f"{shape.coeffs.size} coefficients for a basis of {template.n_shape}",
        )
    verts = verts + template.shape_dirs @ shape.coeffs
    joints = joints + template.joint_shape_dirs() @ shape.coeffs
    return verts, joints


# --------------------------------------------------------------------
def _check_joint_count(template: SkinnedTemplate, n: int):
    if n != template.n_joints:
        raise ConfigurationError(
            "pose", f"pose has {n} joints, template has {template.n_joints}"
        )


# --------------------------------------------------------------------
def _forward_kinematics_t(
    parents: IntArray, joints: Array, axis_angle: Tensor, translation: Tensor
) -> Tensor:
    """Skinning transforms (J, 4, 4): global joint transform times T(-rest joint)."""
    rot = rodrigues_t(axis_angle)
    bottom = np.array([[0.0, 0.0, 0.0, 1.0]])
    world: list[Tensor] = []
    for j, parent in enumerate(parents):
        offset = joints[j] - (joints[parent] if parent >= 0 else 0.0)
        t = offset[:, None] if parent >= 0 else ad.reshape(translation, (3, 1)) + offset[:, None]
        local = ad.concat([ad.concat([rot[j], t], axis=1), bottom], axis=0)
        world.append(local if parent < 0 else world[parent] @ local)
    G = ad.stack(world, axis=0)
    # A_j = G_j T(-J_j): only the translation column changes.
    shift = (G[:, :3, :3] @ joints[:, :, None])[:, :, 0]
    col = G[:, :3, 3] - shift
    top = ad.concat([G[:, :3, :3], ad.reshape(col, (len(parents), 3, 1))], axis=2)
    return ad.concat([top, np.broadcast_to(bottom, (len(parents), 1, 4))], axis=1)


# --------------------------------------------------------------------
def _pose_tensors(pose: Pose, correction=None) -> tuple[Tensor, Tensor]:
    aa = ad.as_tensor(pose.axis_angle)
    rt = ad.as_tensor(pose.root_translation)
    if correction is not None:
        aa = aa + correction[0]
        rt = rt + correction[1]
    return aa, rt


# --------------------------------------------------------------------
def forward_kinematics(
    template: SkinnedTemplate, pose: Pose, shape: Optional[Shape] = None
) -> Array:
    """
    Rigid skinning transforms (J, 4, 4).  Transform j maps a rest-pose
    point to its posed position when the point is driven by joint j
    alone: the parent's transform composed with joint j's local rotation
    about its rest position, the root also translated.
    """
    _check_joint_count(template, pose.n_joints)
    _, joints = _shaped_rest(template, shape)
    with ad.precision(np.float64):
        aa, rt = _pose_tensors(pose)
        return _forward_kinematics_t(template.parents, joints, aa, rt).data


# --------------------------------------------------------------------
def posed_joints(template: SkinnedTemplate, transforms: Array, shape: Optional[Shape] = None) -> Array:
    _, joints = _shaped_rest(template, shape)
    return (transforms[:, :3, :3] @ joints[:, :, None])[:, :, 0] + transforms[:, :3, 3]


# --------------------------------------------------------------------
def face_normals(vertices: Array, faces: IntArray) -> Array:
    """Unnormalized face normals, length equal to twice the face area."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    return np.cross(v1 - v0, v2 - v0)


# --------------------------------------------------------------------
def _degenerate_face(fn: Array, vertices: Array) -> Optional[int]:
    scale = max(float(np.ptp(vertices, axis=0).max()), 1e-12) if len(vertices) else 1.0
    area2 = np.linalg.norm(fn, axis=1)
    bad = np.flatnonzero(area2 <= 1e-12 * scale * scale)
    return int(bad[0]) if bad.size else None


# --------------------------------------------------------------------
def compute_normals(posed_or_vertices, faces: Optional[IntArray] = None) -> Array:
    """
    Unit vertex normals: the area-weighted average of adjacent face
    normals.  Accepts a PosedMesh or a (vertices, faces) pair.
    """
    if isinstance(posed_or_vertices, PosedMesh):
        vertices, faces = posed_or_vertices.vertices, posed_or_vertices.faces
    else:
        vertices = np.asarray(posed_or_vertices, dtype=np.float64)
    assert faces is not None
    fn = face_normals(vertices, faces)
    bad = _degenerate_face(fn, vertices)
    if bad is not None:
        raise DegenerateGeometryError(bad)
    acc = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(acc, faces[:, k], fn)
    length = np.linalg.norm(acc, axis=1, keepdims=True)
    used = np.zeros(len(vertices), dtype=bool)
    used[faces.reshape(-1)] = True
    cancelled = np.flatnonzero(used & (length[:, 0] <= 1e-9 * np.linalg.norm(fn, axis=1).max(initial=0.0)))
    if cancelled.size:
        vertex = int(cancelled[0])
        face = int(np.flatnonzero(np.any(faces == vertex, axis=1))[0])
        raise DegenerateGeometryError(
            face, "Face normals around vertex %d cancel (face %d)." % (vertex, face)
        )
    return acc / np.where(length > 0, length, 1.0)


# --------------------------------------------------------------------
def compute_normals_t(vertices: Tensor, faces: IntArray) -> Tensor:
    """Differentiable `compute_normals()` over a (V, 3) tensor."""
    v0, v1, v2 = (vertices[faces[:, k]] for k in range(3))
    fn = ad.cross(v1 - v0, v2 - v0)
    n_v = vertices.shape[0]
    acc = ad.scatter_add(ad.concat([fn, fn, fn], axis=0), faces.T.reshape(-1), n_v)
    return ad.normalize(acc)


# --------------------------------------------------------------------
def _skin_t(template: SkinnedTemplate, verts: Array, A: Tensor) -> Tensor:
    blended = template.weights @ ad.reshape(A, (template.n_joints, 16))
    M = ad.reshape(blended, (template.n_vertices, 4, 4))
    homog = np.concatenate([verts, np.ones((len(verts), 1))], axis=1)[:, :, None]
    return (M[:, :3, :] @ homog)[:, :, 0]


# --------------------------------------------------------------------
def skin_vertices(
    template: SkinnedTemplate,
    shape: Optional[Shape],
    pose: Pose,
    correction: Optional[tuple[Tensor, Tensor]] = None,
) -> PosedMesh:
    """
    Pose the template: v' = sum_j w_vj T_j (v_rest + shape_dirs . coeffs).

    `correction` is an optional pair of tensors (axis-angle delta (J, 3),
    translation delta (3,)) added to the pose.  When it requires
    gradients and a tape is active, the returned mesh carries
    `vertices_t` connected to it.
    """
    _check_joint_count(template, pose.n_joints)
    verts, joints = _shaped_rest(template, shape)
    dtype = np.float64 if correction is None else correction[0].dtype
    with ad.precision(dtype):
        aa, rt = _pose_tensors(pose, correction)
        A = _forward_kinematics_t(template.parents, joints, aa, rt)
        posed_t = _skin_t(template, verts, A)

    vertices = posed_t.data.astype(np.float64)
    normals = compute_normals(vertices, template.faces)
    return PosedMesh(
        vertices=vertices,
        faces=template.faces,
        vertex_normals=normals,
        joint_transforms=A.data.astype(np.float64),
        template=template,
        vertices_t=posed_t if posed_t.requires_grad else None,
    )


# --------------------------------------------------------------------
def save_template(path: PathSpec, template: SkinnedTemplate):
    meta = {
        "name": template.name,
        "counts": {
            "vertices": template.n_vertices,
            "faces": template.n_faces,
            "joints": template.n_joints,
            "shape": template.n_shape,
        },
        "joint_tree": {
            "parents": [int(p) for p in template.parents],
            "names": list(template.joint_names),
        },
        "shape_basis": {"size": template.n_shape},
    }
    arrays = {
        "vertices": template.vertices,
        "faces": template.faces.astype(np.int32),
        "uv": template.uv,
        "joints": template.joints,
        "weights": template.weights,
        "charts": template.charts.astype(np.int32),
    }
    if template.shape_dirs is not None:
        arrays["shape_dirs"] = template.shape_dirs
    write_container(path, TEMPLATE_KIND, meta, arrays)


# --------------------------------------------------------------------
def load_template(path: PathSpec, check_charts=True) -> SkinnedTemplate:
    meta, arrays = read_container(path, TEMPLATE_KIND)
    template = SkinnedTemplate(
        vertices=arrays["vertices"],
        faces=arrays["faces"],
        uv=arrays["uv"],
        joints=arrays["joints"],
        parents=np.asarray(meta["joint_tree"]["parents"]),
        weights=arrays["weights"],
        shape_dirs=arrays.get("shape_dirs"),
        joint_names=tuple(meta["joint_tree"].get("names", ())),
        charts=arrays.get("charts"),
        name=meta.get("name", "template"),
    )
    return template.validate(check_charts=check_charts)
