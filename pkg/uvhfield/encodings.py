# --------------------------------------------------------------------
# encodings.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Sunday March 9, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
Input encodings: sinusoidal frequency bands for directions, the
multiresolution hash grid over the remapped uvh cube, and the pose
encoder producing the pose latent.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from uvhfield import autodiff as ad
from uvhfield.autodiff import ParamStore, Tensor, TensorLike
from uvhfield.body_model import Pose
from uvhfield.errors import ConfigurationError
from uvhfield.events import EventBus

# --------------------------------------------------------------------
PRIMES = (1, 2654435761, 805459861)
HASH_INIT = 1e-4
POSE_PADDING = 3

# Corner offsets in (x, y, z) bit order: corner c has offset ((c >> 2) & 1, (c >> 1) & 1, c & 1).
_CORNERS = np.array([[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64)


# --------------------------------------------------------------------
@dataclass(frozen=True)
class FreqEncoding:
    bands: int = 6
    include_input: bool = True

    def width(self, dims: int) -> int:
        return dims * (2 * self.bands + (1 if self.include_input else 0))


# --------------------------------------------------------------------
def freq_encode(p: TensorLike, cfg: FreqEncoding = FreqEncoding()) -> Tensor:
    """
    [p, sin(2^0 pi p_0), cos(2^0 pi p_0), ..., sin(2^(L-1) pi p_0),
    cos(2^(L-1) pi p_0), sin(2^0 pi p_1), ...]: sine and cosine pairs per
    band, grouped per input component, after the raw input.

    Accepts (n,) or (N, n).
    """
    p = ad.as_tensor(p)
    single = p.ndim == 1
    x = ad.reshape(p, (1, -1)) if single else p
    rows, dims = x.shape
    freqs = ((2.0 ** np.arange(cfg.bands)) * np.pi).astype(x.dtype)
    scaled = ad.reshape(x, (rows, dims, 1)) * freqs
    pairs = ad.stack([ad.sin(scaled), ad.cos(scaled)], axis=-1)
    bands = ad.reshape(pairs, (rows, dims * cfg.bands * 2))
    out = ad.concat([x, bands], axis=1) if cfg.include_input else bands
    return ad.reshape(out, (out.shape[1],)) if single else out


# --------------------------------------------------------------------
@dataclass(frozen=True)
class HashConfig:
    levels: int = 16
    features: int = 4
    table_size_log2: int = 19
    base_res: int = 16
    max_res: int = 2048

    @property
    def table_size(self) -> int:
        return 2**self.table_size_log2

    @property
    def width(self) -> int:
        return self.levels * self.features


# --------------------------------------------------------------------
class HashGrid:
    """
    Level geometry of a multiresolution hash grid.  The learnable tables
    live in a ParamStore under "hash.level{NN}".
    """

    def __init__(self, cfg: HashConfig = HashConfig()):
        if cfg.levels < 1 or cfg.features < 1 or cfg.base_res < 1:
            raise ConfigurationError("encoding.hash", "levels, features and base_res must be positive")
        if cfg.max_res < cfg.base_res:
            raise ConfigurationError("encoding.hash.max_res", "must be at least base_res")
        self.cfg = cfg
        growth = (
            np.exp((np.log(cfg.max_res) - np.log(cfg.base_res)) / (cfg.levels - 1))
            if cfg.levels > 1
            else 1.0
        )
        self.growth = float(growth)
        self.resolutions = [
            int(np.floor(cfg.base_res * growth**level + 1e-6)) for level in range(cfg.levels)
        ]
        self.dense = [(res + 1) ** 3 <= cfg.table_size for res in self.resolutions]
        self.table_sizes = [
            (res + 1) ** 3 if dense else cfg.table_size
            for res, dense in zip(self.resolutions, self.dense)
        ]

    @property
    def width(self) -> int:
        return self.cfg.width

    @staticmethod
    def param_name(level: int) -> str:
        return "hash.level%02d" % level

    def init_params(self, store: ParamStore, rng: np.random.Generator):
        for level, size in enumerate(self.table_sizes):
            store.add(
                self.param_name(level),
                rng.uniform(-HASH_INIT, HASH_INIT, size=(size, self.cfg.features)),
            )

    def corner_indices(self, level: int, cells: np.ndarray) -> np.ndarray:
        """Table rows of the 8 corners of each cell (N, 3) -> (N, 8)."""
        corners = cells[:, None, :] + _CORNERS[None, :, :]
        if self.dense[level]:
            side = self.resolutions[level] + 1
            return corners[..., 0] + side * (corners[..., 1] + side * corners[..., 2])
        c = corners.astype(np.uint64)
        h = c[..., 0] * np.uint64(PRIMES[0])
        h ^= c[..., 1] * np.uint64(PRIMES[1])
        h ^= c[..., 2] * np.uint64(PRIMES[2])
        return (h % np.uint64(self.table_sizes[level])).astype(np.int64)


# --------------------------------------------------------------------
def to_unit_cube(uvh: TensorLike) -> Tensor:
    """(u, v, h) with h in [-1, 1] to (u, v, (h + 1) / 2)."""
    uvh = ad.as_tensor(uvh)
    shift = np.array([0.0, 0.0, 1.0], dtype=uvh.dtype)
    scale = np.array([1.0, 1.0, 0.5], dtype=uvh.dtype)
    return (uvh + shift) * scale


# --------------------------------------------------------------------
def _trilinear_weights(w: Tensor) -> Tensor:
    """Corner weights (N, 8) from fractional cell positions (N, 3)."""
    wx, wy, wz = w[:, 0], w[:, 1], w[:, 2]
    one = [1.0 - wx, 1.0 - wy, 1.0 - wz]
    hi = [wx, wy, wz]
    cols = []
    for bx, by, bz in _CORNERS:
        cols.append(
            (hi[0] if bx else one[0]) * (hi[1] if by else one[1]) * (hi[2] if bz else one[2])
        )
    return ad.stack(cols, axis=1)


# --------------------------------------------------------------------
def hash_encode(
    positions: TensorLike, grid: HashGrid, params: ParamStore
) -> Tensor:
    """
    Encode unit-cube positions (N, 3) into (N, levels * features).

    Positions outside [0, 1]^3 are clamped and counted under the
    "hash.clamped" diagnostic.  A position of exactly 1 falls into the
    last cell with weight 1 on its upper corners.
    """
    x = ad.as_tensor(positions)
    if x.ndim == 1:
        x = ad.reshape(x, (1, 3))
    outside = np.any((x.data < 0.0) | (x.data > 1.0), axis=1)
    if np.any(outside):
        EventBus.get().count("hash.clamped", int(outside.sum()))
        x = ad.clip(x, 0.0, 1.0)

    n = x.shape[0]
    levels = []
    for level, res in enumerate(grid.resolutions):
        pos = x * float(res)
        cells = np.clip(np.floor(pos.data), 0, res - 1).astype(np.int64)
        w = pos - cells.astype(pos.dtype)
        weights = ad.reshape(_trilinear_weights(w), (n, 8, 1))
        table = params[grid.param_name(level)]
        feats = ad.gather_rows(table, grid.corner_indices(level, cells))
        levels.append(ad.tsum(weights * feats, axis=1))
    return ad.concat(levels, axis=1)


# --------------------------------------------------------------------
def pose_input_width(n_joints: int) -> int:
    return 3 * n_joints + 3 + POSE_PADDING


# --------------------------------------------------------------------
def extended_pose_vector(
    pose: Pose, correction: Optional[tuple[Tensor, Tensor]] = None
) -> Tensor:
    """
    Pose encoder input: joint axis-angles, root translation, then zero
    padding.  With 24 joints this is 78 wide.
    """
    aa = ad.reshape(ad.as_tensor(pose.axis_angle), (-1,))
    rt = ad.as_tensor(pose.root_translation)
    if correction is not None:
        aa = aa + ad.reshape(correction[0], (-1,))
        rt = rt + correction[1]
    pad = np.zeros(POSE_PADDING, dtype=aa.dtype)
    return ad.concat([aa, rt, pad], axis=0)


# --------------------------------------------------------------------
def init_pose_encoder(store: ParamStore, input_width: int, latent_dim: int, rng: np.random.Generator):
    """Weights are stored input-major, (input_width, latent_dim)."""
    bound = np.sqrt(6.0 / (input_width + latent_dim))
    store.add("pose_encoder.W", rng.uniform(-bound, bound, size=(input_width, latent_dim)))
    store.add("pose_encoder.b", np.zeros(latent_dim))


# --------------------------------------------------------------------
def pose_encode(theta_ext: TensorLike, params: ParamStore) -> Tensor:
    """tanh(theta W + b): the pose latent, every component in (-1, 1)."""
    theta = ad.as_tensor(theta_ext)
    W, b = params["pose_encoder.W"], params["pose_encoder.b"]
    if theta.shape[-1] != W.shape[0]:
        raise ConfigurationError(
            "pose.input_width", f"got {theta.shape[-1]} values, encoder expects {W.shape[0]}"
        )
    if theta.ndim == 1:
        return ad.reshape(ad.tanh(ad.reshape(theta, (1, -1)) @ W + b), (W.shape[1],))
    return ad.tanh(theta @ W + b)
