# --------------------------------------------------------------------
# humanoid.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Friday March 7, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
The procedural test humanoid: a 24-joint skeleton in T-pose wrapped in
capped tubes, one per body part.  Every part owns one tile of the UV
atlas, split into a tube chart and two cap charts, so the atlas is
disjoint by construction.
"""

from dataclasses import dataclass
from typing import Callable

import numpy as np

from uvhfield.body_model import SkinnedTemplate
from uvhfield.typedefs import Array

# --------------------------------------------------------------------
JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
)

PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)

# Rest joints in meters: y up, facing +z, left is +x.
_LEFT_JOINTS = {
    "pelvis": (0.0, 0.95, 0.0),
    "left_hip": (0.09, 0.88, 0.0),
    "spine1": (0.0, 1.05, 0.0),
    "left_knee": (0.10, 0.50, 0.01),
    "spine2": (0.0, 1.18, 0.0),
    "left_ankle": (0.10, 0.10, 0.0),
    "spine3": (0.0, 1.30, 0.0),
    "left_foot": (0.10, 0.03, 0.12),
    "neck": (0.0, 1.50, 0.0),
    "left_collar": (0.07, 1.42, 0.0),
    "head": (0.0, 1.58, 0.0),
    "left_shoulder": (0.18, 1.42, 0.0),
    "left_elbow": (0.45, 1.42, 0.0),
    "left_wrist": (0.70, 1.42, 0.0),
    "left_hand": (0.80, 1.42, 0.0),
}

SHAPE_SIZE = 2
ATLAS_COLS = 5
ATLAS_ROWS = 4


# --------------------------------------------------------------------
def joint_positions() -> Array:
    joints = np.zeros((len(JOINT_NAMES), 3))
    for j, name in enumerate(JOINT_NAMES):
        if name.startswith("right_"):
            x, y, z = _LEFT_JOINTS["left_" + name[len("right_"):]]
            joints[j] = (-x, y, z)
        else:
            joints[j] = _LEFT_JOINTS[name]
    return joints


# --------------------------------------------------------------------
def joint_index(name: str) -> int:
    return JOINT_NAMES.index(name)


# --------------------------------------------------------------------
@dataclass
class Part:
    """A capped tube from `start` to `end` skinned along its length."""

    name: str
    start: Array
    end: Array
    radius: float
    # (s, joint) knots; weights are hat functions between knots.
    knots: tuple[tuple[float, int], ...]
    profile: Callable[[Array], Array] = lambda s: np.ones_like(s)
    flatten: float = 1.0

    def weights_at(self, s: Array, n_joints: int) -> Array:
        pos = np.array([k[0] for k in self.knots])
        ids = [k[1] for k in self.knots]
        out = np.zeros((len(s), n_joints))
        for i, joint in enumerate(ids):
            basis = np.zeros(len(ids))
            basis[i] = 1.0
            out[:, joint] += np.interp(s, pos, basis)
        return out / out.sum(axis=1, keepdims=True)


# --------------------------------------------------------------------
def _frame(axis: Array) -> tuple[Array, Array]:
    """Unit vectors e1, e2 with (e1, e2, axis) right-handed."""
    ref = np.array([0.0, 0.0, 1.0])
    if abs(axis @ ref) > 0.9:
        ref = np.array([1.0, 0.0, 0.0])
    e1 = np.cross(ref, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2


# --------------------------------------------------------------------
def _parts() -> list[Part]:
    J = joint_positions()
    ji = joint_index

    def between(a: str, b: str, pre=0.0, post=0.0):
        pa, pb = J[ji(a)], J[ji(b)]
        axis = (pb - pa) / np.linalg.norm(pb - pa)
        return pa - pre * axis, pb + post * axis

    bulge = lambda s: 0.75 + 0.25 * np.sin(np.pi * s)
    taper = lambda s: 1.0 - 0.25 * s

    parts = [
        Part(
            "torso",
            np.array([0.0, 0.80, 0.0]),
            np.array([0.0, 1.50, 0.0]),
            0.15,
            (
                (0.0, ji("pelvis")),
                (0.21, ji("pelvis")),
                (0.36, ji("spine1")),
                (0.54, ji("spine2")),
                (0.71, ji("spine3")),
                (1.0, ji("neck")),
            ),
            profile=lambda s: 0.85 + 0.15 * np.sin(np.pi * s),
            flatten=0.65,
        ),
        Part(
            "neck",
            np.array([0.0, 1.46, 0.0]),
            np.array([0.0, 1.60, 0.0]),
            0.05,
            ((0.0, ji("neck")), (1.0, ji("head"))),
        ),
        Part(
            "head",
            np.array([0.0, 1.56, 0.0]),
            np.array([0.0, 1.82, 0.0]),
            0.10,
            ((0.0, ji("head")), (1.0, ji("head"))),
            profile=bulge,
        ),
    ]
    for side in ("left", "right"):
        s = side + "_"
        parts += [
            Part(
                s + "collar",
                *between(s + "collar", s + "shoulder", post=0.02),
                0.05,
                ((0.0, ji(s + "collar")), (1.0, ji(s + "shoulder"))),
            ),
            Part(
                s + "upper_arm",
                *between(s + "shoulder", s + "elbow"),
                0.045,
                (
                    (0.0, ji(s + "collar")),
                    (0.15, ji(s + "shoulder")),
                    (0.85, ji(s + "shoulder")),
                    (1.0, ji(s + "elbow")),
                ),
            ),
            Part(
                s + "forearm",
                *between(s + "elbow", s + "wrist"),
                0.038,
                (
                    (0.0, ji(s + "elbow")),
                    (0.85, ji(s + "elbow")),
                    (1.0, ji(s + "wrist")),
                ),
                profile=taper,
            ),
            Part(
                s + "hand",
                *between(s + "wrist", s + "hand", post=0.05),
                0.032,
                ((0.0, ji(s + "wrist")), (0.5, ji(s + "hand")), (1.0, ji(s + "hand"))),
                flatten=0.55,
            ),
            Part(
                s + "thigh",
                *between(s + "hip", s + "knee"),
                0.075,
                (
                    (0.0, ji("pelvis")),
                    (0.15, ji(s + "hip")),
                    (0.85, ji(s + "hip")),
                    (1.0, ji(s + "knee")),
                ),
                profile=taper,
            ),
            Part(
                s + "shin",
                *between(s + "knee", s + "ankle"),
                0.055,
                (
                    (0.0, ji(s + "knee")),
                    (0.85, ji(s + "knee")),
                    (1.0, ji(s + "ankle")),
                ),
                profile=taper,
            ),
            Part(
                s + "foot",
                *between(s + "ankle", s + "foot", pre=0.02, post=0.06),
                0.04,
                ((0.0, ji(s + "ankle")), (0.6, ji(s + "foot")), (1.0, ji(s + "foot"))),
                flatten=0.6,
            ),
        ]
    return parts


# --------------------------------------------------------------------
def _tile(index: int) -> tuple[float, float, float, float]:
    col, row = index % ATLAS_COLS, index // ATLAS_COLS
    w, h = 1.0 / ATLAS_COLS, 1.0 / ATLAS_ROWS
    return col * w, row * h, w, h


# --------------------------------------------------------------------
def _tube(part: Part, tile: tuple, n_ring: int, n_len: int, n_joints: int):
    """
    Vertices, faces (local indices), face uvs, face chart offsets, weights
    and girth directions for one capped tube.
    """
    axis = part.end - part.start
    length = np.linalg.norm(axis)
    axis_u = axis / length
    e1, e2 = _frame(axis_u)

    s = np.linspace(0.0, 1.0, n_len)
    phi = 2 * np.pi * np.arange(n_ring) / n_ring
    radius = part.radius * part.profile(s)

    radial = (
        np.cos(phi)[:, None] * e1[None, :] + part.flatten * np.sin(phi)[:, None] * e2[None, :]
    )
    centers = part.start[None, :] + s[:, None] * axis[None, :]
    ring = centers[:, None, :] + radius[:, None, None] * radial[None, :, :]
    cap_lo = part.start - 0.5 * part.radius * axis_u
    cap_hi = part.end + 0.5 * part.radius * axis_u
    verts = np.concatenate([ring.reshape(-1, 3), cap_lo[None], cap_hi[None]])
    lo_id, hi_id = n_len * n_ring, n_len * n_ring + 1

    girth = np.concatenate(
        [
            (ring - centers[:, None, :]).reshape(-1, 3),
            (cap_lo - part.start)[None],
            (cap_hi - part.end)[None],
        ]
    )

    s_all = np.concatenate([np.repeat(s, n_ring), [0.0, 1.0]])
    weights = part.weights_at(s_all, n_joints)

    u0, v0, tw, th = tile
    m = 0.04
    tube_u = lambda k: u0 + tw * (m + (1 - 2 * m) * k / n_ring)
    tube_v = lambda i: v0 + th * (m + 0.6 * i / (n_len - 1))
    cap_r = th * 0.14
    cap_c = [
        np.array([u0 + tw * 0.27, v0 + th * 0.80]),
        np.array([u0 + tw * 0.73, v0 + th * 0.80]),
    ]

    vid = lambda i, k: i * n_ring + (k % n_ring)
    faces, uvs, charts = [], [], []
    for i in range(n_len - 1):
        for k in range(n_ring):
            a, b = vid(i, k), vid(i, k + 1)
            c, d = vid(i + 1, k), vid(i + 1, k + 1)
            ua, ub = tube_u(k), tube_u(k + 1)
            va, vb = tube_v(i), tube_v(i + 1)
            faces.append((a, b, c))
            uvs.append(((ua, va), (ub, va), (ua, vb)))
            faces.append((b, d, c))
            uvs.append(((ub, va), (ub, vb), (ua, vb)))
            charts += [0, 0]

    disk = lambda center, k: center + cap_r * np.array(
        [np.cos(2 * np.pi * k / n_ring), np.sin(2 * np.pi * k / n_ring)]
    )
    last = n_len - 1
    for k in range(n_ring):
        faces.append((lo_id, vid(0, k + 1), vid(0, k)))
        uvs.append((cap_c[0], disk(cap_c[0], k + 1), disk(cap_c[0], k)))
        charts.append(1)
        faces.append((hi_id, vid(last, k), vid(last, k + 1)))
        uvs.append((cap_c[1], disk(cap_c[1], k), disk(cap_c[1], k + 1)))
        charts.append(2)

    return (
        verts,
        np.array(faces, dtype=np.int64),
        np.array(uvs, dtype=np.float64),
        np.array(charts, dtype=np.int64),
        weights,
        girth,
    )


# --------------------------------------------------------------------
def build_humanoid(n_ring: int = 16, n_len: int = 12) -> SkinnedTemplate:
    """
    Build the test humanoid.  The default resolution gives a few
    thousand vertices.

    Shape coefficient 0 stretches the body vertically by 6% per unit
    and coefficient 1 scales the girth of every part by 10% per unit.
    """
    joints = joint_positions()
    n_joints = len(joints)
    parts = _parts()
    if len(parts) > ATLAS_COLS * ATLAS_ROWS:
        raise ValueError("Too many parts for the atlas.")

    verts, faces, uvs, charts, weights, dirs = [], [], [], [], [], []
    base = 0
    for index, part in enumerate(parts):
        v, f, uv, ch, w, girth = _tube(part, _tile(index), n_ring, n_len, n_joints)
        height = np.zeros_like(v)
        height[:, 1] = 0.06 * v[:, 1]
        verts.append(v)
        faces.append(f + base)
        uvs.append(uv)
        charts.append(ch + 3 * index)
        weights.append(w)
        dirs.append(np.stack([height, 0.10 * girth], axis=-1))
        base += len(v)

    return SkinnedTemplate(
        vertices=np.concatenate(verts),
        faces=np.concatenate(faces),
        uv=np.concatenate(uvs),
        joints=joints,
        parents=np.array(PARENTS),
        weights=np.concatenate(weights),
        shape_dirs=np.concatenate(dirs),
        joint_names=JOINT_NAMES,
        charts=np.concatenate(charts),
        name="humanoid",
    )
