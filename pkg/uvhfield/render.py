# --------------------------------------------------------------------
# render.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Tuesday March 11, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Pinhole cameras, ray generation, shell-culled ray marching and
front-to-back compositing.

Cameras follow the x-right, y-down, z-forward convention.  A march
clips each ray to the posed mesh's bounding box dilated by h_max, takes
stratified samples inside it, and only hands the samples within the
shell to the field.  Everything else has zero density and is never
evaluated.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import Tensor
from uvhfield.body_model import Pose, Shape, SkinnedTemplate
from uvhfield.errors import ContractViolation, UndefinedMetricError
from uvhfield.field import FieldOutput, FieldParams, FrameContext, prepare_frame, query_points
from uvhfield.surface_map import SurfaceIndex, seam_statistics
from uvhfield.typedefs import Array, BoolArray, IntArray, JsonDict
from uvhfield.utils import parallel_map

# --------------------------------------------------------------------
WHITE = (1.0, 1.0, 1.0)
ORTHONORMAL_TOL = 1e-6
UNIT_TOL = 1e-6

FieldQuery = Callable[..., FieldOutput]


# --------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_from_camera: Array = field(default_factory=lambda: np.eye(4))
    id: str = ""

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractViolation(f"camera {self.id!r} focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ContractViolation(f"camera {self.id!r} has an empty image")
        M = np.asarray(self.world_from_camera, dtype=np.float64)
        if M.shape != (4, 4):
            raise ContractViolation(f"camera {self.id!r} extrinsics must be 4x4")
        R = M[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMAL_TOL or np.linalg.det(R) < 0:
            raise ContractViolation(f"camera {self.id!r} rotation is not orthonormal")
        M = M.copy()
        M.setflags(write=False)
        object.__setattr__(self, "world_from_camera", M)

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        width: int,
        height: int,
        focal: float,
        up: Sequence[float] = (0.0, 1.0, 0.0),
        id: str = "",
    ) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        M = np.eye(4)
        M[:3, 0], M[:3, 1], M[:3, 2], M[:3, 3] = right, down, forward, eye
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, M, id)

    @property
    def rotation(self) -> Array:
        return self.world_from_camera[:3, :3]

    @property
    def center(self) -> Array:
        return self.world_from_camera[:3, 3]

    @property
    def forward(self) -> Array:
        return self.world_from_camera[:3, 2]

    def project(self, points: Array) -> tuple[Array, Array]:
        """Continuous pixel coordinates (N, 2) as (col, row), and depth (N,)."""
        p = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.center) @ self.rotation
        z = p[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            col = self.fx * p[:, 0] / z + self.cx
            row = self.fy * p[:, 1] / z + self.cy
        return np.stack([col, row], axis=1), z

    def all_pixels(self) -> IntArray:
        rows, cols = np.mgrid[0 : self.height, 0 : self.width]
        return np.stack([cols.ravel(), rows.ravel()], axis=1)

    def to_dict(self) -> JsonDict:
        return {
            "id": self.id,
            "fx": float(self.fx),
            "fy": float(self.fy),
            "cx": float(self.cx),
            "cy": float(self.cy),
            "width": int(self.width),
            "height": int(self.height),
            "world_from_camera": self.world_from_camera.tolist(),
        }

    @classmethod
    def from_dict(cls, data: JsonDict) -> "Camera":
        return cls(
            fx=float(data["fx"]),
            fy=float(data["fy"]),
            cx=float(data["cx"]),
            cy=float(data["cy"]),
            width=int(data["width"]),
            height=int(data["height"]),
            world_from_camera=np.asarray(data["world_from_camera"], dtype=np.float64),
            id=str(data.get("id", "")),
        )


# --------------------------------------------------------------------
def generate_rays(camera: Camera, pixels) -> tuple[Array, Array]:
    """
    Rays through the centers of integer pixels (N, 2) given as
    (col, row).  Returns origins (N, 3) and unit directions (N, 3).
    """
    px = np.asarray(pixels).reshape(-1, 2)
    cols, rows = px[:, 0], px[:, 1]
    bad = (cols < 0) | (cols >= camera.width) | (rows < 0) | (rows >= camera.height)
    if np.any(bad):
        first = px[np.flatnonzero(bad)[0]]
        raise ContractViolation(
            f"pixel ({first[0]}, {first[1]}) outside a {camera.width}x{camera.height} image"
        )
    x = (cols + 0.5 - camera.cx) / camera.fx
    y = (rows + 0.5 - camera.cy) / camera.fy
    local = np.stack([x, y, np.ones_like(x, dtype=np.float64)], axis=1)
    local /= np.linalg.norm(local, axis=1, keepdims=True)
    dirs = local @ camera.rotation.T
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    return origins, dirs


# --------------------------------------------------------------------
@dataclass
class RaySample:
    """
    Samples of a batch of rays: t (R, S) in meters, interval lengths
    delta (R, S), density (R, S) and color (R, S, 3).  Rays that missed
    the bounding box have `hit` False and no evaluated samples.
    """

    t: Array
    delta: Array
    sigma: Tensor
    rgb: Tensor
    evaluated: IntArray
    culled: IntArray
    faces: IntArray
    hit: BoolArray
    deltas: list[Tensor] = field(default_factory=list)

    @property
    def n_samples(self) -> int:
        return self.t.shape[1]


# --------------------------------------------------------------------
def ray_box(origins: Array, dirs: Array, lo: Array, hi: Array) -> tuple[Array, Array]:
    """Slab test: entry and exit distances; exit < entry on a miss."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    # 0 * inf is nan for an origin on a slab plane with a parallel ray; ignored.
    t_near = np.nanmax(np.minimum(t0, t1), axis=1)
    t_far = np.nanmin(np.maximum(t0, t1), axis=1)
    return t_near, t_far


# --------------------------------------------------------------------
def march_rays(
    origins: Array,
    dirs: Array,
    index: SurfaceIndex,
    field_query: FieldQuery,
    n_samples: int,
    rng: Optional[np.random.Generator] = None,
    near: float = 0.0,
    far: float = np.inf,
    cull: bool = True,
) -> RaySample:
    """
    March a batch of rays through the shell of the posed mesh.

    Samples are stratified over [near, far] clipped to the dilated
    bounding box, jittered from `rng` or placed at bin centers when it
    is None.  With `cull` the shell test runs here and `field_query` only
    sees samples inside the shell; without it every sample is passed on
    and the query is expected to apply the shell rule itself.
    """
    if not near < far:
        raise ContractViolation(f"near ({near}) must be less than far ({far})")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > UNIT_TOL):
        raise ContractViolation("ray directions must be unit length")

    R, S = len(origins), int(n_samples)
    t_in, t_out = ray_box(origins, dirs, index.lo, index.hi)
    t_in, t_out = np.maximum(t_in, near), np.minimum(t_out, far)
    hit = t_out > t_in

    width = np.where(hit, t_out - t_in, 0.0) / S
    jitter = rng.uniform(size=(R, S)) if rng is not None else np.full((R, S), 0.5)
    start = np.where(hit, t_in, 0.0)
    t = start[:, None] + (np.arange(S)[None, :] + jitter) * width[:, None]
    delta = np.broadcast_to(width[:, None], (R, S)).copy()

    rays = np.repeat(np.flatnonzero(hit), S)
    cols = np.tile(np.arange(S), int(hit.sum()))
    flat = rays * S + cols
    points = origins[rays] + t[rays, cols][:, None] * dirs[rays]
    if cull and len(points):
        keep = index.shell(points)
        flat, points, rays = flat[keep], points[keep], rays[keep]

    out = field_query(points, dirs[rays], assume_inside=cull)
    keep = np.flatnonzero(out.inside)
    flat = flat[keep]
    sigma_in = ad.getitem(out.sigma, keep)
    rgb_in = ad.getitem(out.rgb, keep)

    sigma = ad.reshape(ad.scatter_add(sigma_in, flat, R * S), (R, S))
    rgb = ad.reshape(ad.scatter_add(rgb_in, flat, R * S), (R, S, 3))
    faces = np.full(R * S, -1, dtype=np.int64)
    faces[flat] = out.faces[keep]
    evaluated = np.bincount(flat // max(S, 1), minlength=R).astype(np.int64)

    return RaySample(
        t=t,
        delta=delta,
        sigma=sigma,
        rgb=rgb,
        evaluated=evaluated,
        culled=S - evaluated,
        faces=faces.reshape(R, S),
        hit=hit,
        deltas=[out.delta] if out.delta is not None else [],
    )


# --------------------------------------------------------------------
def march_ray(
    origin: Array,
    direction: Array,
    index: SurfaceIndex,
    field_query: FieldQuery,
    n_samples: int,
    rng: Optional[np.random.Generator] = None,
    near: float = 0.0,
    far: float = np.inf,
) -> RaySample:
    return march_rays(
        np.asarray(origin)[None, :],
        np.asarray(direction)[None, :],
        index,
        field_query,
        n_samples,
        rng,
        near,
        far,
    )


# --------------------------------------------------------------------
def composite_arrays(sigma, rgb, delta, background=WHITE) -> tuple[Tensor, Tensor]:
    """
    Front-to-back quadrature over the last sample axis.  sigma (R, S),
    rgb (R, S, 3), delta (R, S) give colors (R, 3) and alpha (R,).
    """
    sigma = ad.as_tensor(sigma)
    rgb = ad.as_tensor(rgb)
    R, S = sigma.shape
    dtype = sigma.dtype
    tau = sigma * np.asarray(delta, dtype=dtype)
    T = ad.exp(-ad.cumsum_exclusive(tau, axis=1))
    weights = T * (1.0 - ad.exp(-tau))
    alpha = ad.tsum(weights, axis=1)
    color = ad.tsum(ad.reshape(weights, (R, S, 1)) * rgb, axis=1)
    bg = np.asarray(background, dtype=dtype).reshape(1, 3)
    color = color + ad.reshape(1.0 - alpha, (R, 1)) * bg
    return color, alpha


# --------------------------------------------------------------------
def composite(samples: RaySample, background=WHITE) -> tuple[Tensor, Tensor]:
    return composite_arrays(samples.sigma, samples.rgb, samples.delta, background)


# --------------------------------------------------------------------
def field_query_for(params: FieldParams, frame: FrameContext) -> FieldQuery:
    def query(x: Array, d: Array, assume_inside: bool = False) -> FieldOutput:
        return query_points(params, frame, x, d, assume_inside=assume_inside)

    return query


# --------------------------------------------------------------------
@dataclass(frozen=True)
class RenderConfig:
    samples: int = 128
    background: tuple[float, float, float] = WHITE
    seed: int = 0
    chunk: int = 4096
    stratified: bool = True
    near: float = 0.0
    far: float = np.inf


# --------------------------------------------------------------------
def render_rays(
    origins: Array,
    dirs: Array,
    params: FieldParams,
    frame: FrameContext,
    cfg: RenderConfig,
    rng: Optional[np.random.Generator],
) -> tuple[Tensor, Tensor, RaySample]:
    """March and composite a batch of rays; differentiable on an active tape."""
    samples = march_rays(
        origins,
        dirs,
        frame.index,
        field_query_for(params, frame),
        cfg.samples,
        rng if cfg.stratified else None,
        cfg.near,
        cfg.far,
    )
    color, alpha = composite(samples, cfg.background)
    return color, alpha, samples


# --------------------------------------------------------------------
@dataclass
class RenderResult:
    rgb: Array
    alpha: Array
    seams: dict[str, float]
    evaluated: int
    culled: int
    rays_hit: int


# --------------------------------------------------------------------
def render_frame(
    camera: Camera, frame: FrameContext, params: FieldParams, cfg: RenderConfig = RenderConfig()
) -> RenderResult:
    """
    Render every pixel of `camera` in chunks on the worker pool.  Each
    chunk seeds its own generator from (seed, chunk), so the image does
    not depend on scheduling.
    """
    pixels = camera.all_pixels()
    starts = list(range(0, len(pixels), cfg.chunk))

    def render_chunk(i: int):
        px = pixels[starts[i] : starts[i] + cfg.chunk]
        origins, dirs = generate_rays(camera, px)
        rng = np.random.default_rng([cfg.seed, i])
        color, alpha, samples = render_rays(origins, dirs, params, frame, cfg, rng)
        return color.data, alpha.data, samples

    parts = parallel_map(render_chunk, range(len(starts)))
    rgb = np.concatenate([p[0] for p in parts]).reshape(camera.height, camera.width, 3)
    alpha = np.concatenate([p[1] for p in parts]).reshape(camera.height, camera.width)
    faces = np.concatenate([p[2].faces for p in parts]) if parts else np.zeros((0, 0), np.int64)
    return RenderResult(
        rgb=rgb,
        alpha=alpha,
        seams=seam_statistics(faces, frame.posed.template.charts),
        evaluated=int(sum(p[2].evaluated.sum() for p in parts)),
        culled=int(sum(p[2].culled.sum() for p in parts)),
        rays_hit=int(sum(p[2].hit.sum() for p in parts)),
    )


# --------------------------------------------------------------------
def render_image(
    camera: Camera,
    pose: Pose,
    shape: Optional[Shape],
    params: FieldParams,
    template: SkinnedTemplate,
    cfg: RenderConfig = RenderConfig(),
) -> tuple[Array, Array]:
    frame = prepare_frame(params, template, pose, shape)
    result = render_frame(camera, frame, params, cfg)
    return result.rgb, result.alpha


# --------------------------------------------------------------------
def masked_psnr(rendered: Array, ground_truth: Array, mask: Array) -> float:
    """10 log10(1 / MSE) over the pixels of `mask`; inf for a perfect match."""
    rendered = np.asarray(rendered, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    if rendered.shape != ground_truth.shape or rendered.shape[:2] != mask.shape:
        raise ContractViolation(
            f"image shapes differ: {rendered.shape}, {ground_truth.shape}, mask {mask.shape}"
        )
    if not mask.any():
        raise UndefinedMetricError("the mask selects no pixels")
    mse = float(np.mean((rendered[mask] - ground_truth[mask]) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))
