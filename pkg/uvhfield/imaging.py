# --------------------------------------------------------------------
# imaging.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Tuesday March 11, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

from uvhfield.errors import ManifestError
from uvhfield.typedefs import Array, BoolArray, PathSpec


# --------------------------------------------------------------------
def to_uint8(image: Array) -> np.ndarray:
    """Float colors in [0, 1] to 8-bit, rounding to nearest."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


# --------------------------------------------------------------------
def from_uint8(image: np.ndarray) -> Array:
    return np.asarray(image, dtype=np.float64) / 255.0


# --------------------------------------------------------------------
def _png_info(text: Optional[dict[str, str]]) -> Optional[PngInfo]:
    if not text:
        return None
    info = PngInfo()
    for key, value in text.items():
        info.add_text(key, str(value))
    return info


# --------------------------------------------------------------------
def write_png(
    path: PathSpec,
    rgb: Array,
    alpha: Optional[Array] = None,
    text: Optional[dict[str, str]] = None,
) -> Path:
    """
    Save an (H, W, 3) float image, as RGBA when `alpha` (H, W) is given.
    `text` entries are stored as PNG text chunks.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = to_uint8(rgb)
    if alpha is not None:
        pixels = np.concatenate([pixels, to_uint8(alpha)[:, :, None]], axis=2)
    image = Image.fromarray(pixels)
    try:
        image.save(path, format="PNG", pnginfo=_png_info(text))
    except OSError as e:
        raise ManifestError(path, f"cannot write image: {e}") from e
    return path


# --------------------------------------------------------------------
def write_mask(path: PathSpec, mask: BoolArray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pixels = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    try:
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as e:
        raise ManifestError(path, f"cannot write mask: {e}") from e
    return path


# --------------------------------------------------------------------
def read_png(path: PathSpec) -> Array:
    """(H, W, 3) float image in [0, 1]; any alpha channel is dropped."""
    try:
        with Image.open(path) as image:
            return from_uint8(np.array(image.convert("RGB")))
    except OSError as e:
        raise ManifestError(path, f"cannot read image: {e}") from e


# --------------------------------------------------------------------
def read_mask(path: PathSpec) -> BoolArray:
    try:
        with Image.open(path) as image:
            return np.array(image.convert("L")) >= 128
    except OSError as e:
        raise ManifestError(path, f"cannot read mask: {e}") from e


# --------------------------------------------------------------------
def read_png_text(path: PathSpec) -> dict[str, str]:
    try:
        with Image.open(path) as image:
            return dict(getattr(image, "text", {}))
    except OSError as e:
        raise ManifestError(path, f"cannot read image: {e}") from e
