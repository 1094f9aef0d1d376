# --------------------------------------------------------------------
# field.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Monday March 10, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
The radiance field.  A query point is projected to (u, v, h) around the
posed body, shifted by the pose-conditioned remapping network, hash
encoded, and decoded into density and a feature vector by a residual
network that also receives the pose latent.  A small head turns the
feature and the encoded global and local view directions into color.

Two ablations replace parts of the pipeline: `no_remap` passes uvh
through unchanged, and `no_resnet` swaps the residual trunk for a plain
MLP that never sees the pose.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import ParamStore, Tensor, TensorLike
from uvhfield.body_model import Pose, PosedMesh, Shape, SkinnedTemplate, compute_normals_t, skin_vertices
from uvhfield.encodings import (
    FreqEncoding,
    HashConfig,
    HashGrid,
    extended_pose_vector,
    freq_encode,
    hash_encode,
    init_pose_encoder,
    pose_encode,
    pose_input_width,
    to_unit_cube,
)
from uvhfield.errors import ConfigurationError
from uvhfield.surface_map import (
    DEFAULT_H_MAX,
    SurfaceIndex,
    differentiable_uvh,
    emit_projection_failures,
    local_view_dir,
    surface_index,
)
from uvhfield.typedefs import Array, BoolArray, IntArray, JsonDict

# --------------------------------------------------------------------
MLP_LAYERS = 8


# --------------------------------------------------------------------
class Ablation:
    NONE = "none"
    NO_RESNET = "no_resnet"
    NO_REMAP = "no_remap"
    BOTH = "both"

    ALL = (NONE, NO_RESNET, NO_REMAP, BOTH)

    @staticmethod
    def flags(name: str) -> tuple[bool, bool]:
        """(no_resnet, no_remap) for an ablation name."""
        match name:
            case Ablation.NONE:
                return False, False
            case Ablation.NO_RESNET:
                return True, False
            case Ablation.NO_REMAP:
                return False, True
            case Ablation.BOTH:
                return True, True
            case _:
                raise ConfigurationError("train.ablate", f"unknown ablation {name!r}")


# --------------------------------------------------------------------
@dataclass(frozen=True)
class FieldConfig:
    n_joints: int = 24
    latent_dim: int = 16
    width: int = 64
    blocks: int = 5
    feature_width: int = 64
    remap_hidden: int = 64
    remap_scale: float = 0.05
    rgb_hidden: int = 64
    h_max: float = DEFAULT_H_MAX
    dispersed: bool = True
    fallback: bool = True
    hash: HashConfig = field(default_factory=HashConfig)
    freq: FreqEncoding = field(default_factory=FreqEncoding)
    no_resnet: bool = False
    no_remap: bool = False

    def with_ablation(self, name: str) -> "FieldConfig":
        no_resnet, no_remap = Ablation.flags(name)
        return replace(self, no_resnet=no_resnet, no_remap=no_remap)

    @property
    def ablation(self) -> str:
        for name in Ablation.ALL:
            if Ablation.flags(name) == (self.no_resnet, self.no_remap):
                return name
        return Ablation.NONE

    def to_dict(self) -> JsonDict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: JsonDict) -> "FieldConfig":
        data = dict(data)
        data["hash"] = HashConfig(**data.get("hash", {}))
        data["freq"] = FreqEncoding(**data.get("freq", {}))
        return cls(**data)


# --------------------------------------------------------------------
def _init_linear(
    store: ParamStore,
    name: str,
    fan_in: int,
    fan_out: int,
    rng: np.random.Generator,
    zero: bool = False,
):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    W = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-bound, bound, (fan_in, fan_out))
    store.add(f"{name}.W", W)
    store.add(f"{name}.b", np.zeros(fan_out))


# --------------------------------------------------------------------
def linear(x: TensorLike, store: ParamStore, name: str) -> Tensor:
    return ad.as_tensor(x) @ store[f"{name}.W"] + store[f"{name}.b"]


# --------------------------------------------------------------------
class FieldParams:
    """Every learnable tensor of the field, grouped by network."""

    def __init__(self, cfg: FieldConfig, store: ParamStore):
        self.cfg = cfg
        self.store = store
        self.grid = HashGrid(cfg.hash)

    @classmethod
    def create(cls, cfg: FieldConfig, seed: int = 0, dtype=np.float32) -> "FieldParams":
        rng = np.random.default_rng(seed)
        store = ParamStore(dtype)
        params = cls(cfg, store)
        params.grid.init_params(store, rng)
        P, W = cfg.latent_dim, cfg.width
        init_pose_encoder(store, pose_input_width(cfg.n_joints), P, rng)

        if not cfg.no_remap:
            _init_linear(store, "remap.l0", 3 + P, cfg.remap_hidden, rng)
            _init_linear(store, "remap.l1", cfg.remap_hidden, cfg.remap_hidden, rng)
            _init_linear(store, "remap.l2", cfg.remap_hidden, 3, rng, zero=True)

        hash_w = params.grid.width
        if cfg.no_resnet:
            _init_linear(store, "mlp.l0", hash_w, W, rng)
            for i in range(1, MLP_LAYERS):
                _init_linear(store, f"mlp.l{i}", W, W, rng)
            _init_linear(store, "mlp.sigma", W, 1, rng)
            _init_linear(store, "mlp.feature", W, cfg.feature_width, rng)
        else:
            _init_linear(store, "resnet.in", hash_w + P, W, rng)
            for i in range(cfg.blocks):
                _init_linear(store, f"resnet.block{i}.l1", W + P, W, rng)
                _init_linear(store, f"resnet.block{i}.l2", W, W, rng)
            _init_linear(store, "resnet.sigma", W, 1, rng)
            _init_linear(store, "resnet.feature", W, cfg.feature_width, rng)

        dir_w = cfg.freq.width(3)
        _init_linear(store, "rgb.l0", cfg.feature_width + 2 * dir_w, cfg.rgb_hidden, rng)
        _init_linear(store, "rgb.l1", cfg.rgb_hidden, 3, rng)
        return params

    @property
    def trunk(self) -> str:
        return "mlp" if self.cfg.no_resnet else "resnet"

    def zero_networks(self) -> "FieldParams":
        """Zero every network weight, leaving the hash tables alone."""
        for name, tensor in self.store.items():
            if ParamStore.group_of(name) != "hash":
                tensor.data[...] = 0
        return self

    def count(self) -> int:
        return self.store.count()


# --------------------------------------------------------------------
def remap_uvh(uvh: TensorLike, latent: TensorLike, params: FieldParams) -> tuple[Tensor, Tensor]:
    """
    uvh' = uvh + delta with delta = remap_scale * tanh(MLP(uvh, latent)).
    Accepts one coordinate (3,) or a batch (N, 3).
    """
    uvh = ad.as_tensor(uvh)
    single = uvh.ndim == 1
    x = ad.reshape(uvh, (1, 3)) if single else uvh
    n = x.shape[0]
    lat = ad.as_tensor(latent)
    lat = ad.broadcast_to(ad.reshape(lat, (1, -1)), (n, lat.shape[-1]))
    s = params.store
    h = ad.relu(linear(ad.concat([x, lat], axis=1), s, "remap.l0"))
    h = ad.relu(linear(h, s, "remap.l1"))
    delta = params.cfg.remap_scale * ad.tanh(linear(h, s, "remap.l2"))
    out = x + delta
    if single:
        return ad.reshape(out, (3,)), ad.reshape(delta, (3,))
    return out, delta


# --------------------------------------------------------------------
def resnet_trunk(features: Tensor, latent: Tensor, params: FieldParams) -> tuple[Tensor, Tensor]:
    """Density (N,) and feature vectors (N, feature_width)."""
    s, cfg = params.store, params.cfg
    n = features.shape[0]
    lat = ad.broadcast_to(ad.reshape(latent, (1, -1)), (n, cfg.latent_dim))
    h = ad.relu(linear(ad.concat([features, lat], axis=1), s, "resnet.in"))
    for i in range(cfg.blocks):
        inner = ad.relu(linear(ad.concat([h, lat], axis=1), s, f"resnet.block{i}.l1"))
        h = h + linear(inner, s, f"resnet.block{i}.l2")
    sigma = ad.softplus(ad.reshape(linear(h, s, "resnet.sigma"), (n,)))
    return sigma, linear(h, s, "resnet.feature")


# --------------------------------------------------------------------
def conventional_trunk(features: Tensor, params: FieldParams) -> tuple[Tensor, Tensor]:
    s = params.store
    n = features.shape[0]
    h = features
    for i in range(MLP_LAYERS):
        h = ad.relu(linear(h, s, f"mlp.l{i}"))
    sigma = ad.softplus(ad.reshape(linear(h, s, "mlp.sigma"), (n,)))
    return sigma, linear(h, s, "mlp.feature")


# --------------------------------------------------------------------
def rgb_head(feature: Tensor, dirs: TensorLike, params: FieldParams) -> Tensor:
    s = params.store
    h = ad.relu(linear(ad.concat([feature, dirs], axis=1), s, "rgb.l0"))
    return ad.sigmoid(linear(h, s, "rgb.l1"))


# --------------------------------------------------------------------
def offset_penalty(deltas: Optional[TensorLike]) -> Tensor:
    """Mean over the batch of the L1 norm of each offset."""
    if deltas is None:
        return ad.as_tensor(0.0)
    deltas = ad.as_tensor(deltas)
    if deltas.ndim == 1:
        deltas = ad.reshape(deltas, (1, -1))
    if deltas.shape[0] == 0:
        return ad.as_tensor(0.0)
    return ad.mean(ad.tsum(ad.absolute(deltas), axis=1))


# --------------------------------------------------------------------
@dataclass
class FrameContext:
    """Everything a batch of queries against one posed frame shares."""

    posed: PosedMesh
    index: SurfaceIndex
    latent: Tensor
    vertices: Optional[Tensor] = None
    normals: Optional[Tensor] = None


# --------------------------------------------------------------------
def prepare_frame(
    params: FieldParams,
    template: SkinnedTemplate,
    pose: Pose,
    shape: Optional[Shape] = None,
    correction: Optional[tuple[Tensor, Tensor]] = None,
    posed: Optional[PosedMesh] = None,
) -> FrameContext:
    """
    Pose the body and encode the pose.  With a `correction` on an active
    tape, the vertices, normals and latent stay connected to it.  An
    already posed mesh may be passed in when there is no correction.
    """
    if pose.n_joints != params.cfg.n_joints:
        raise ConfigurationError(
            "pose", f"pose has {pose.n_joints} joints, field expects {params.cfg.n_joints}"
        )
    if posed is None or correction is not None:
        posed = skin_vertices(template, shape, pose, correction)
    index = surface_index(posed, params.cfg.h_max)
    vertices = normals = None
    if posed.differentiable:
        vertices = posed.vertices_t
        normals = compute_normals_t(vertices, posed.faces)
    latent = pose_encode(extended_pose_vector(pose, correction), params.store)
    return FrameContext(posed, index, latent, vertices, normals)


# --------------------------------------------------------------------
@dataclass
class FieldOutput:
    sigma: Tensor
    rgb: Tensor
    delta: Optional[Tensor]
    inside: BoolArray
    faces: IntArray


# --------------------------------------------------------------------
def query_points(
    params: FieldParams, frame: FrameContext, x: Array, d: Array, assume_inside: bool = False
) -> FieldOutput:
    """
    Evaluate the field at points x (N, 3) seen along unit directions
    d (N, 3).  Points outside the shell, or whose projection failed, get
    zero density and zero color without touching the networks.
    `assume_inside` skips the shell test for points already culled.
    """
    cfg = params.cfg
    x = np.asarray(x, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    n = len(x)
    dtype = params.store.dtype
    faces = np.full(n, -1, dtype=np.int64)

    if assume_inside:
        idx = np.arange(n)
    else:
        idx = np.flatnonzero(frame.index.shell(x)) if n else np.zeros(0, np.int64)
    if idx.size:
        if cfg.dispersed:
            sp, found, fell_back = frame.index.dispersed(x[idx], fallback=cfg.fallback)
        else:
            f, _, bary = frame.index.nearest(x[idx])
            sp = frame.index.surface_points(x[idx], f, bary)
            found = np.ones(idx.size, dtype=bool)
            fell_back = np.ones(idx.size, dtype=bool)
        if not np.all(found):
            emit_projection_failures(int(np.sum(~found)))
            sp, fell_back, idx = sp.take(found), fell_back[found], idx[found]

    if idx.size == 0:
        return FieldOutput(
            sigma=ad.Tensor(np.zeros(n, dtype=dtype)),
            rgb=ad.Tensor(np.zeros((n, 3), dtype=dtype)),
            delta=None,
            inside=np.zeros(n, dtype=bool),
            faces=faces,
        )

    faces[idx] = sp.face
    uvh = differentiable_uvh(x[idx], sp, frame.index, fell_back, frame.vertices, frame.normals)
    if cfg.no_remap:
        uvh_prime, delta = uvh, None
    else:
        uvh_prime, delta = remap_uvh(uvh, frame.latent, params)

    enc = hash_encode(to_unit_cube(uvh_prime), params.grid, params.store)
    if cfg.no_resnet:
        sigma_in, feature = conventional_trunk(enc, params)
    else:
        sigma_in, feature = resnet_trunk(enc, frame.latent, params)

    d_in = d[idx]
    d_local = local_view_dir(d_in, sp.frame)
    dirs = np.concatenate(
        [freq_encode(d_in, cfg.freq).data, freq_encode(d_local, cfg.freq).data], axis=1
    ).astype(dtype)
    rgb_in = rgb_head(feature, dirs, params)

    inside = np.zeros(n, dtype=bool)
    inside[idx] = True
    return FieldOutput(
        sigma=ad.scatter_add(sigma_in, idx, n),
        rgb=ad.scatter_add(rgb_in, idx, n),
        delta=delta,
        inside=inside,
        faces=faces,
    )


# --------------------------------------------------------------------
def query_field(
    x,
    d,
    pose: Pose,
    shape: Optional[Shape],
    params: FieldParams,
    template: SkinnedTemplate,
) -> tuple[float, Array]:
    """Density and color of a single point."""
    frame = prepare_frame(params, template, pose, shape)
    out = query_points(params, frame, np.asarray(x)[None, :], np.asarray(d)[None, :])
    return float(out.sigma.data[0]), out.rgb.data[0].copy()
