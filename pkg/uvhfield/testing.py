# --------------------------------------------------------------------
# testing.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Thursday April 13, 2023
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Test helpers: output capture and small deterministic meshes, templates
and scenes that are cheap enough to build in every test.
"""

import io
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from uvhfield.body_model import Pose, SkinnedTemplate, save_template
from uvhfield.datagen import DatasetManifest, SceneSpec, generate_dataset
from uvhfield.encodings import FreqEncoding, HashConfig
from uvhfield.field import FieldConfig
from uvhfield.render import Camera
from uvhfield.typedefs import Array, IntArray, PathSpec

# --------------------------------------------------------------------
CHAIN_TEMPLATE_NAME = "chain.uvht"


# --------------------------------------------------------------------
class OutputCapture:
    VALID_TARGETS = set(["stdout", "stderr"])

    def __init__(self, **kwargs):
        self.targets = set()

        for k, v in kwargs.items():
            if k not in OutputCapture.VALID_TARGETS:
                raise ValueError(
                    f"Capture targets must be one or more of {OutputCapture.VALID_TARGETS}."
                )
            if v:
                self.targets.add(k)

        self.stdout = io.StringIO()
        self.stderr = io.StringIO()
        self.original_streams: dict[str, io.IOBase] = {}

    def __enter__(self, *args):
        for target in self.targets:
            self.original_streams[target] = getattr(sys, target)
            setattr(sys, target, getattr(self, target))
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        for target in self.targets:
            setattr(sys, target, self.original_streams[target])
        self.original_streams.clear()


# --------------------------------------------------------------------
def tiled_uv(n_faces: int, margin: float = 0.1) -> Array:
    """One small uv triangle per face, each in its own grid cell."""
    side = int(np.ceil(np.sqrt(max(n_faces, 1))))
    cell = 1.0 / side
    i = np.arange(n_faces)
    u0 = (i % side) * cell + margin * cell
    v0 = (i // side) * cell + margin * cell
    size = (1.0 - 2 * margin) * cell
    uv = np.zeros((n_faces, 3, 2))
    uv[:, 0] = np.stack([u0, v0], axis=1)
    uv[:, 1] = np.stack([u0 + size, v0], axis=1)
    uv[:, 2] = np.stack([u0, v0 + size], axis=1)
    return uv


# --------------------------------------------------------------------
def rigid_template(vertices: Array, faces: IntArray, uv: Optional[Array] = None, charts=None, name="mesh"):
    """A single-joint template, every vertex bound to the root."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    return SkinnedTemplate(
        vertices=vertices,
        faces=faces,
        uv=tiled_uv(len(faces)) if uv is None else uv,
        joints=np.zeros((1, 3)),
        parents=np.array([-1]),
        weights=np.ones((len(vertices), 1)),
        joint_names=("root",),
        charts=np.arange(len(faces)) if charts is None else charts,
        name=name,
    )


# --------------------------------------------------------------------
def tent_mesh() -> SkinnedTemplate:
    """
    Two slopes meeting at a ridge along z at x = 0, y = 1.  The left
    slope (faces 0, 1) and right slope (faces 2, 3) are separate charts
    in the left and right halves of the atlas.
    """
    vertices = [
        (-1.0, 0.0, -1.0),
        (-1.0, 0.0, 1.0),
        (0.0, 1.0, -1.0),
        (0.0, 1.0, 1.0),
        (1.0, 0.0, -1.0),
        (1.0, 0.0, 1.0),
    ]
    faces = [(0, 1, 3), (0, 3, 2), (2, 3, 5), (2, 5, 4)]
    left = [[(0.0, 0.0), (0.4, 0.0), (0.4, 0.4)], [(0.0, 0.0), (0.4, 0.4), (0.0, 0.4)]]
    right = [[(0.6, 0.0), (0.6, 0.4), (1.0, 0.4)], [(0.6, 0.0), (1.0, 0.4), (1.0, 0.0)]]
    return rigid_template(vertices, faces, np.array(left + right), np.array([0, 0, 1, 1]), "tent")


# --------------------------------------------------------------------
def quad_mesh(size: float = 1.0) -> SkinnedTemplate:
    """A square in the z = 0 plane facing +z, two triangles."""
    h = size / 2
    vertices = [(-h, -h, 0.0), (h, -h, 0.0), (h, h, 0.0), (-h, h, 0.0)]
    faces = [(0, 1, 2), (0, 2, 3)]
    uv = np.array([[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0)], [(0.0, 0.0), (1.0, 1.0), (0.0, 1.0)]])
    return rigid_template(vertices, faces, uv, np.array([0, 0]), "quad")


# --------------------------------------------------------------------
def fan_mesh(n: int = 6, radius: float = 1.0) -> SkinnedTemplate:
    """A flat disc in the z = 0 plane: n triangles around the origin."""
    angles = 2 * np.pi * np.arange(n) / n
    rim = np.stack([radius * np.cos(angles), radius * np.sin(angles), np.zeros(n)], axis=1)
    vertices = np.concatenate([np.zeros((1, 3)), rim])
    faces = np.array([(0, 1 + i, 1 + (i + 1) % n) for i in range(n)])
    return rigid_template(vertices, faces, name="fan")


# --------------------------------------------------------------------
def cube_mesh(size: float = 1.0) -> SkinnedTemplate:
    """An axis-aligned cube centered on the origin, outward facing."""
    h = size / 2
    vertices = np.array([(x, y, z) for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [
        (0, 1, 3, 2),
        (4, 6, 7, 5),
        (0, 4, 5, 1),
        (2, 3, 7, 6),
        (0, 2, 6, 4),
        (1, 5, 7, 3),
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return rigid_template(vertices, faces, name="cube")


# --------------------------------------------------------------------
def icosphere(subdivisions: int = 1, radius: float = 1.0) -> SkinnedTemplate:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]  # fmt: skip
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]  # fmt: skip
    points = [np.asarray(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]

    for _ in range(subdivisions):
        midpoints: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in midpoints:
                m = points[a] + points[b]
                points.append(m / np.linalg.norm(m))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = refined

    return rigid_template(radius * np.array(points), faces, name="icosphere")


# --------------------------------------------------------------------
def chain_template(n_ring: int = 8, n_rings: int = 9, radius: float = 0.2) -> SkinnedTemplate:
    """
    A three-joint chain: an open tube along +y from 0 to 2 with joints
    at y = 0, 1, 2.  Weights blend linearly between neighboring joints.
    One shape coefficient scales the tube radius by 10% per unit.
    """
    joints = np.array([(0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 2.0, 0.0)])
    ys = np.linspace(0.0, 2.0, n_rings)
    theta = 2 * np.pi * np.arange(n_ring) / n_ring
    radial = np.stack([np.sin(theta), np.zeros(n_ring), np.cos(theta)], axis=1)

    vertices = np.concatenate([radius * radial + [0.0, y, 0.0] for y in ys])
    shape_dirs = np.tile(0.1 * radius * radial, (n_rings, 1))[:, :, None]
    weights = np.maximum(0.0, 1.0 - np.abs(vertices[:, 1:2] - joints[None, :, 1]))
    weights /= weights.sum(axis=1, keepdims=True)

    faces, uv = [], []
    for i in range(n_rings - 1):
        v0, v1 = i / (n_rings - 1), (i + 1) / (n_rings - 1)
        for k in range(n_ring):
            a = i * n_ring + k
            b = i * n_ring + (k + 1) % n_ring
            c = (i + 1) * n_ring + (k + 1) % n_ring
            d = (i + 1) * n_ring + k
            u0, u1 = k / n_ring, (k + 1) / n_ring
            faces += [(a, b, c), (a, c, d)]
            uv += [[(u0, v0), (u1, v0), (u1, v1)], [(u0, v0), (u1, v1), (u0, v1)]]

    return SkinnedTemplate(
        vertices=vertices,
        faces=np.array(faces),
        uv=np.array(uv),
        joints=joints,
        parents=np.array([-1, 0, 1]),
        weights=weights,
        shape_dirs=shape_dirs,
        joint_names=("base", "middle", "tip"),
        charts=np.zeros(len(faces), dtype=np.int64),
        name="chain",
    )


# --------------------------------------------------------------------
def chain_poses(n: int, max_bend: float = 0.6) -> list[Pose]:
    """The middle joint bending about z from straight to `max_bend`."""
    poses = []
    for angle in np.linspace(0.0, max_bend, n):
        aa = np.zeros((3, 3))
        aa[1, 2] = angle
        poses.append(Pose(aa))
    return poses


# --------------------------------------------------------------------
def small_field_config(n_joints: int, **kwargs) -> FieldConfig:
    """A field small enough to train for a few steps in a unit test."""
    options = dict(
        n_joints=n_joints,
        latent_dim=4,
        width=8,
        blocks=2,
        feature_width=8,
        remap_hidden=8,
        rgb_hidden=8,
        hash=HashConfig(levels=4, features=2, table_size_log2=10, base_res=4, max_res=32),
        freq=FreqEncoding(bands=2),
    )
    options.update(kwargs)
    return FieldConfig(**options)


# --------------------------------------------------------------------
def micro_scene(size: int = 8) -> tuple[SkinnedTemplate, Camera, Pose]:
    """A quad facing a camera two meters away, filling most of the image."""
    template = quad_mesh()
    camera = Camera.look_at((0.0, 0.0, 2.0), (0.0, 0.0, 0.0), size, size, 1.5 * size, id="micro")
    return template, camera, Pose.zeros(1)


# --------------------------------------------------------------------
def tiny_scene_spec(**kwargs) -> SceneSpec:
    options = dict(
        template=CHAIN_TEMPLATE_NAME,
        n_train_poses=2,
        n_holdout_poses=1,
        n_cameras=3,
        holdout_camera=1,
        width=24,
        height=24,
        texture_size=32,
        shape=(0.0,),
    )
    options.update(kwargs)
    return SceneSpec(**options)


# --------------------------------------------------------------------
def tiny_dataset(out_dir: PathSpec, config_hash: str = "", **kwargs) -> DatasetManifest:
    """
    A chain dataset of three poses seen by three cameras.  The template
    is saved next to the manifest so the dataset is self-contained.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    template = chain_template()
    save_template(out / CHAIN_TEMPLATE_NAME, template)
    spec = tiny_scene_spec(**kwargs)
    return generate_dataset(
        spec, out, template=template, poses=chain_poses(spec.n_poses), config_hash=config_hash
    )
