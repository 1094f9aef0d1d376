# --------------------------------------------------------------------
# datagen.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Wednesday March 12, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Synthetic multi-view ground truth.  The textured test humanoid is posed
along a motion sequence and rasterized from a ring of cameras into
images and coverage masks, together with a manifest that records the
exact poses, the jittered "fitted" poses and the held-out splits.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from uvhfield.body_model import Pose, PosedMesh, Shape, SkinnedTemplate, load_template, skin_vertices
from uvhfield.bvh import ragged_arange
from uvhfield.errors import ConfigurationError, ManifestError
from uvhfield.events import EventBus, Events
from uvhfield.humanoid import ATLAS_COLS, ATLAS_ROWS, build_humanoid
from uvhfield.imaging import read_mask, read_png, write_mask, write_png
from uvhfield.motions import keyframes, sequence
from uvhfield.render import WHITE, Camera
from uvhfield.typedefs import Array, BoolArray, JsonDict, PathSpec
from uvhfield.utils import dump_json, parallel_map

# --------------------------------------------------------------------
SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"
SEQUENCE_FRAMES = 120
AMBIENT = 0.35
NEAR_Z = 1e-6
HEAD_TILE = 2


# --------------------------------------------------------------------
class Split:
    TRAIN = "train"
    NOVEL_VIEW = "novel_view"
    NOVEL_POSE = "novel_pose"
    HOLDOUT_BOTH = "holdout_both"

    ALL = (TRAIN, NOVEL_VIEW, NOVEL_POSE, HOLDOUT_BOTH)

    @staticmethod
    def of(camera_held_out: bool, pose_held_out: bool) -> str:
        if camera_held_out:
            return Split.HOLDOUT_BOTH if pose_held_out else Split.NOVEL_VIEW
        return Split.NOVEL_POSE if pose_held_out else Split.TRAIN


# --------------------------------------------------------------------
@dataclass(frozen=True)
class SceneSpec:
    template: str = "humanoid"
    sequence: str = "arm_rotation"
    n_train_poses: int = 10
    n_holdout_poses: int = 2
    n_cameras: int = 8
    heights: tuple[float, ...] = (1.0, 1.6)
    radius: float = 3.0
    look_at: tuple[float, float, float] = (0.0, 1.0, 0.0)
    width: int = 128
    height: int = 128
    focal_scale: float = 1.3
    holdout_camera: int = 1
    light: Optional[tuple[float, float, float]] = (0.3, 0.8, 0.5)
    texture_size: int = 256
    pose_jitter_std: float = 0.0
    shape: tuple[float, ...] = (0.0, 0.0)
    background: tuple[float, float, float] = WHITE
    seed: int = 0

    def validate(self) -> "SceneSpec":
        if self.n_cameras < 2:
            raise ConfigurationError("data.n_cameras", "at least 2 cameras are required")
        if not 0 <= self.holdout_camera < self.n_cameras:
            raise ConfigurationError("data.holdout_camera", f"no camera {self.holdout_camera}")
        if self.n_train_poses < 1 or self.n_holdout_poses < 0:
            raise ConfigurationError("data.n_train_poses", "pose counts must be positive")
        if self.n_holdout_poses and self.n_train_poses + self.n_holdout_poses < 2:
            raise ConfigurationError("data.n_holdout_poses", "novel poses need at least 2 poses")
        if self.pose_jitter_std < 0:
            raise ConfigurationError("data.pose_jitter_std", "must not be negative")
        if self.width < 1 or self.height < 1 or not self.heights:
            raise ConfigurationError("data.width", "image and ring must not be empty")
        return self

    @property
    def n_poses(self) -> int:
        return self.n_train_poses + self.n_holdout_poses

    def to_dict(self) -> JsonDict:
        return json.loads(json.dumps(asdict(self)))

    @classmethod
    def from_dict(cls, data: JsonDict) -> "SceneSpec":
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigurationError(f"data.{key}", "unknown key")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**values)


# --------------------------------------------------------------------
@dataclass
class FrameRecord:
    image: str
    mask: str
    camera: str
    pose_index: int
    pose: Pose
    pose_fitted: Pose
    shape: Shape
    split: str

    def to_dict(self) -> JsonDict:
        return {
            "image": self.image,
            "mask": self.mask,
            "camera": self.camera,
            "pose_index": self.pose_index,
            "pose": self.pose.to_list(),
            "pose_fitted": self.pose_fitted.to_list(),
            "shape": self.shape.to_list(),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, data: JsonDict) -> "FrameRecord":
        return cls(
            image=data["image"],
            mask=data["mask"],
            camera=data["camera"],
            pose_index=int(data["pose_index"]),
            pose=Pose.from_vector(data["pose"]),
            pose_fitted=Pose.from_vector(data["pose_fitted"]),
            shape=Shape(data["shape"]),
            split=data["split"],
        )


# --------------------------------------------------------------------
@dataclass
class Splits:
    train_cameras: list[str]
    holdout_cameras: list[str]
    train_poses: list[int]
    holdout_poses: list[int]

    def to_dict(self) -> JsonDict:
        return asdict(self)


# --------------------------------------------------------------------
@dataclass
class DatasetManifest:
    cameras: list[Camera]
    records: list[FrameRecord]
    splits: Splits
    template: str = "humanoid"
    texture: str = "texture.png"
    background: tuple[float, float, float] = WHITE
    config_hash: str = ""
    schema_version: int = SCHEMA_VERSION
    root: Path = field(default=Path("."), compare=False)

    def camera(self, id: str) -> Camera:
        for camera in self.cameras:
            if camera.id == id:
                return camera
        raise ManifestError(self.root / MANIFEST_NAME, f"no camera {id!r}")

    def records_for(self, split: str) -> list[FrameRecord]:
        if split not in Split.ALL:
            raise ConfigurationError("split", f"unknown split {split!r}")
        return [r for r in self.records if r.split == split]

    def train_poses(self) -> dict[int, FrameRecord]:
        """One training record per training pose index, for pose lookups."""
        out = {}
        for record in self.records_for(Split.TRAIN):
            out.setdefault(record.pose_index, record)
        return dict(sorted(out.items()))

    def to_dict(self) -> JsonDict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "template": self.template,
            "texture": self.texture,
            "background": [float(c) for c in self.background],
            "cameras": [c.to_dict() for c in self.cameras],
            "splits": self.splits.to_dict(),
            "records": [r.to_dict() for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: JsonDict, root: PathSpec = ".") -> "DatasetManifest":
        return cls(
            cameras=[Camera.from_dict(c) for c in data["cameras"]],
            records=[FrameRecord.from_dict(r) for r in data["records"]],
            splits=Splits(**data["splits"]),
            template=data.get("template", "humanoid"),
            texture=data.get("texture", "texture.png"),
            background=tuple(data.get("background", WHITE)),
            config_hash=data.get("config_hash", ""),
            schema_version=int(data["schema_version"]),
            root=Path(root),
        )

    def serialize(self) -> str:
        return dump_json(self.to_dict())

    @property
    def dataset_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def validate(self, path: Optional[PathSpec] = None) -> "DatasetManifest":
        """Held-out cameras and poses must never appear in training records."""
        path = path or self.root / MANIFEST_NAME
        s = self.splits
        if set(s.train_cameras) & set(s.holdout_cameras):
            raise ManifestError(path, "a camera is both trained on and held out")
        if set(s.train_poses) & set(s.holdout_poses):
            raise ManifestError(path, "a pose is both trained on and held out")
        ids = {c.id for c in self.cameras}
        if len(ids) != len(self.cameras):
            raise ManifestError(path, "camera ids are not unique")
        for record in self.records:
            if record.camera not in ids:
                raise ManifestError(path, f"record {record.image} names unknown camera {record.camera!r}")
            if record.split not in Split.ALL:
                raise ManifestError(path, f"record {record.image} has unknown split {record.split!r}")
            expected = Split.of(record.camera in s.holdout_cameras, record.pose_index in s.holdout_poses)
            if record.split != expected:
                raise ManifestError(
                    path, f"record {record.image} is tagged {record.split!r}, expected {expected!r}"
                )
        return self


# --------------------------------------------------------------------
def save_manifest(manifest: DatasetManifest, path: PathSpec) -> Path:
    path = Path(path)
    manifest.validate(path)
    try:
        path.write_text(manifest.serialize())
    except OSError as e:
        raise ManifestError(path, f"cannot write: {e}") from e
    return path


# --------------------------------------------------------------------
def load_manifest(path: PathSpec) -> DatasetManifest:
    """
    Load and validate a manifest.  `path` may name the file or the
    dataset directory.  Any data following the schema is accepted, so
    external captures can be converted into it.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(path, f"cannot read: {e}") from e
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(path, f"unsupported schema version {data.get('schema_version')!r}")
    try:
        manifest = DatasetManifest.from_dict(data, root=path.parent)
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(path, f"malformed manifest: {e}") from e
    return manifest.validate(path)


# --------------------------------------------------------------------
def load_frame(manifest: DatasetManifest, record: FrameRecord) -> tuple[Array, BoolArray]:
    return read_png(manifest.root / record.image), read_mask(manifest.root / record.mask)


# --------------------------------------------------------------------
def jitter_poses(poses: list[Pose], std: float, seed: int) -> list[Pose]:
    """Add i.i.d. Gaussian noise to every axis-angle component."""
    if std < 0:
        raise ConfigurationError("data.pose_jitter_std", "must not be negative")
    if std == 0:
        return list(poses)
    rng = np.random.default_rng(seed)
    return [
        Pose(p.axis_angle + rng.normal(0.0, std, p.axis_angle.shape), p.root_translation)
        for p in poses
    ]


# --------------------------------------------------------------------
def procedural_texture(size: int = 256) -> Array:
    """
    The body atlas: one hue per part tile with a fine checker and a
    vertical gradient on top, plus eyes and a mouth on the head tile.
    Rows follow v, columns follow u.
    """
    c = (np.arange(size) + 0.5) / size
    u, v = np.meshgrid(c, c)
    tu, tv = u * ATLAS_COLS, v * ATLAS_ROWS
    tile = np.floor(tu) + ATLAS_COLS * np.floor(tv)
    lu, lv = tu - np.floor(tu), tv - np.floor(tv)

    hue = tile / (ATLAS_COLS * ATLAS_ROWS)
    phase = 2 * np.pi * (hue[..., None] + np.array([0.0, 1 / 3, 2 / 3]))
    base = 0.5 + 0.35 * np.cos(phase)
    checker = (np.floor(tu * 8) + np.floor(tv * 8)) % 2
    tex = base * (0.75 + 0.25 * checker[..., None]) * (0.8 + 0.2 * lv[..., None])

    head = tile == HEAD_TILE
    for eye_u in (0.22, 0.32):
        eye = head & ((lu - eye_u) ** 2 + (lv - 0.42) ** 2 < 0.025**2)
        tex[eye] = (0.05, 0.05, 0.1)
    mouth = head & (((lu - 0.27) / 0.05) ** 2 + ((lv - 0.30) / 0.012) ** 2 < 1.0)
    tex[mouth] = (0.7, 0.1, 0.1)
    return np.clip(tex, 0.0, 1.0)


# --------------------------------------------------------------------
def sample_texture(texture: Array, uv: Array) -> Array:
    """Bilinear lookup with clamped edges; texel centers at half-integers."""
    H, W = texture.shape[:2]
    x = np.asarray(uv)[:, 0] * W - 0.5
    y = np.asarray(uv)[:, 1] * H - 0.5
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = (x - x0)[:, None], (y - y0)[:, None]
    x0i = np.clip(x0.astype(np.int64), 0, W - 1)
    x1i = np.clip(x0.astype(np.int64) + 1, 0, W - 1)
    y0i = np.clip(y0.astype(np.int64), 0, H - 1)
    y1i = np.clip(y0.astype(np.int64) + 1, 0, H - 1)
    top = texture[y0i, x0i] * (1 - fx) + texture[y0i, x1i] * fx
    bottom = texture[y1i, x0i] * (1 - fx) + texture[y1i, x1i] * fx
    return top * (1 - fy) + bottom * fy


# --------------------------------------------------------------------
def _cross2(a: Array, b: Array) -> Array:
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


# --------------------------------------------------------------------
def rasterize_view(
    posed: PosedMesh,
    texture: Array,
    camera: Camera,
    light: Optional[Array] = None,
    background=WHITE,
) -> tuple[Array, BoolArray]:
    """
    Z-buffered rasterization of the front faces of `posed`, sampling
    pixel centers.  Texture coordinates are interpolated with
    perspective-correct barycentrics.  With a `light` direction the
    texture color is Lambert shaded over an ambient floor.
    """
    W, H = camera.width, camera.height
    faces = posed.faces
    pix, depth = camera.project(posed.vertices)
    tri_px, tri_z = pix[faces], depth[faces]
    tris = posed.vertices[faces]

    fn = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    facing = np.sum(fn * (tris[:, 0] - camera.center), axis=1) < 0
    valid = facing & np.all(tri_z > NEAR_Z, axis=1) & np.all(np.isfinite(tri_px), axis=(1, 2))

    lo = np.ceil(tri_px.min(axis=1) - 0.5)
    hi = np.floor(tri_px.max(axis=1) - 0.5)
    lo = np.maximum(lo, 0)
    hi = np.minimum(hi, [W - 1, H - 1])
    valid &= np.all(hi >= lo, axis=1)

    image = np.broadcast_to(np.asarray(background, dtype=np.float64), (H, W, 3)).copy()
    mask = np.zeros((H, W), dtype=bool)
    f = np.flatnonzero(valid)
    if f.size == 0:
        return image, mask

    lo, hi = lo[f].astype(np.int64), hi[f].astype(np.int64)
    span = hi - lo + 1
    counts = span[:, 0] * span[:, 1]
    owner = np.repeat(np.arange(f.size), counts)
    local = ragged_arange(counts)
    col = lo[owner, 0] + local % span[owner, 0]
    row = lo[owner, 1] + local // span[owner, 0]
    p = np.stack([col + 0.5, row + 0.5], axis=1)

    a, b, c = (tri_px[f][owner, i] for i in range(3))
    area = _cross2(b - a, c - a)
    with np.errstate(divide="ignore", invalid="ignore"):
        w0 = _cross2(b - p, c - p) / area
        w1 = _cross2(c - p, a - p) / area
    w2 = 1.0 - w0 - w1
    screen = np.stack([w0, w1, w2], axis=1)
    inside = (area != 0) & np.all(screen >= -1e-12, axis=1)

    owner, col, row, screen = owner[inside], col[inside], row[inside], screen[inside]
    q = screen / tri_z[f][owner]
    s = q.sum(axis=1)
    bary = q / s[:, None]
    z = 1.0 / s

    pid = row * W + col
    order = np.lexsort((z, pid))
    first = np.ones(order.size, dtype=bool)
    first[1:] = pid[order][1:] != pid[order][:-1]
    win = order[first]

    face = f[owner[win]]
    bary = bary[win]
    uv = np.sum(bary[:, :, None] * posed.template.uv[face], axis=1)
    color = sample_texture(texture, uv)
    if light is not None:
        normal = np.sum(bary[:, :, None] * posed.vertex_normals[faces[face]], axis=1)
        normal /= np.linalg.norm(normal, axis=1, keepdims=True)
        light = np.asarray(light, dtype=np.float64)
        lambert = np.maximum(normal @ (light / np.linalg.norm(light)), 0.0)
        color = color * (AMBIENT + (1.0 - AMBIENT) * lambert)[:, None]

    image[row[win], col[win]] = color
    mask[row[win], col[win]] = True
    return image, mask


# --------------------------------------------------------------------
def camera_ring(spec: SceneSpec) -> list[Camera]:
    """Cameras evenly spaced around the body, alternating between heights."""
    target = np.asarray(spec.look_at, dtype=np.float64)
    cameras = []
    for i in range(spec.n_cameras):
        angle = 2 * np.pi * i / spec.n_cameras
        eye = np.array(
            [
                target[0] + spec.radius * np.sin(angle),
                spec.heights[i % len(spec.heights)],
                target[2] + spec.radius * np.cos(angle),
            ]
        )
        cameras.append(
            Camera.look_at(
                eye, target, spec.width, spec.height, spec.focal_scale * spec.width, id="cam%02d" % i
            )
        )
    return cameras


# --------------------------------------------------------------------
def holdout_pose_indices(n_poses: int, n_holdout: int) -> list[int]:
    """Held-out poses are spread through the interior of the sequence."""
    if n_holdout == 0:
        return []
    picks = np.linspace(0, n_poses - 1, n_holdout + 2)[1:-1].round().astype(int)
    return sorted(set(int(i) for i in picks))


# --------------------------------------------------------------------
def resolve_template(name: str, root: Optional[PathSpec] = None) -> SkinnedTemplate:
    """The built-in humanoid, or a template file relative to `root`."""
    if name == "humanoid":
        return build_humanoid()
    path = Path(name)
    if root is not None and not path.is_absolute():
        path = Path(root) / path
    return load_template(path)


# --------------------------------------------------------------------
def generate_dataset(
    spec: SceneSpec,
    out_dir: PathSpec,
    template: Optional[SkinnedTemplate] = None,
    poses: Optional[list[Pose]] = None,
    config_hash: str = "",
) -> DatasetManifest:
    """
    Render every (camera, pose) pair of the scene into `out_dir` and
    write the manifest there.  `template` and `poses` override the ones
    named by the scene.
    """
    spec.validate()
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ManifestError(out, f"cannot create dataset directory: {e}") from e

    template = template or resolve_template(spec.template)
    if poses is None:
        poses = keyframes(sequence(spec.sequence, SEQUENCE_FRAMES), spec.n_poses)
    fitted = jitter_poses(poses, spec.pose_jitter_std, spec.seed)
    if any(spec.shape) and len(spec.shape) != template.n_shape:
        raise ConfigurationError("data.shape", f"template has {template.n_shape} shape coefficients")
    shape = Shape(spec.shape) if len(spec.shape) == template.n_shape else Shape.zeros(template.n_shape)

    cameras = camera_ring(spec)
    held_cameras = {cameras[spec.holdout_camera].id}
    held_poses = set(holdout_pose_indices(len(poses), spec.n_holdout_poses))
    splits = Splits(
        train_cameras=[c.id for c in cameras if c.id not in held_cameras],
        holdout_cameras=sorted(held_cameras),
        train_poses=[i for i in range(len(poses)) if i not in held_poses],
        holdout_poses=sorted(held_poses),
    )

    texture = procedural_texture(spec.texture_size)
    write_png(out / "texture.png", texture)
    posed = [skin_vertices(template, shape, pose) for pose in poses]
    light = None if spec.light is None else np.asarray(spec.light, dtype=np.float64)
    stamp = {"config_hash": config_hash} if config_hash else None

    def render_view(job: tuple[int, int]) -> FrameRecord:
        pi, ci = job
        camera = cameras[ci]
        rgb, mask = rasterize_view(posed[pi], texture, camera, light, spec.background)
        name = "p%03d_%s.png" % (pi, camera.id)
        write_png(out / "images" / name, rgb, text=stamp)
        write_mask(out / "masks" / name, mask)
        return FrameRecord(
            image=f"images/{name}",
            mask=f"masks/{name}",
            camera=camera.id,
            pose_index=pi,
            pose=poses[pi],
            pose_fitted=fitted[pi],
            shape=shape,
            split=Split.of(camera.id in held_cameras, pi in held_poses),
        )

    jobs = [(pi, ci) for pi in range(len(poses)) for ci in range(len(cameras))]
    records = parallel_map(render_view, jobs)
    manifest = DatasetManifest(
        cameras=cameras,
        records=records,
        splits=splits,
        template=spec.template,
        texture="texture.png",
        background=tuple(float(c) for c in spec.background),
        config_hash=config_hash,
        root=out,
    )
    save_manifest(manifest, out / MANIFEST_NAME)
    EventBus.get().emit(
        Events.INFO, "datagen", f"{len(records)} views of {len(poses)} poses written to {out}"
    )
    return manifest
