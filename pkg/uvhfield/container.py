# --------------------------------------------------------------------
# container.py
#
# Author: Lain Musgrove (lain.proliant@gmail.com)
# Date: Thursday March 6, 2025
#
# Distributed under terms of the MIT license.
# --------------------------------------------------------------------

"""
A small versioned binary container: a JSON header followed by
little-endian array blobs.

    magic    4 bytes   b"UVHC"
    version  uint16    little-endian
    length   uint32    little-endian, byte length of the JSON header
    header   JSON      {"kind", "meta", "blobs": [{name, dtype, shape, offset, nbytes}]}
    blobs    bytes     concatenated, offsets relative to the end of the header

Skinned templates and model checkpoints are both stored this way.
"""

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from uvhfield.errors import UvhError
from uvhfield.typedefs import JsonDict, PathSpec

# --------------------------------------------------------------------
MAGIC = b"UVHC"
VERSION = 1
_PREFIX = struct.Struct("<4sHI")


# --------------------------------------------------------------------
class ContainerError(UvhError):
    def __init__(self, path, reason):
        super().__init__(f'Container "{path}": {reason}')
        self.path = path
        self.reason = reason


# --------------------------------------------------------------------
def _le_dtype(arr: np.ndarray) -> np.dtype:
    return arr.dtype.newbyteorder("<")


# --------------------------------------------------------------------
def write_container(
    path: PathSpec, kind: str, meta: JsonDict, arrays: dict[str, np.ndarray]
) -> Path:
    path = Path(path)
    blobs = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        data = arr.astype(_le_dtype(arr), copy=False).tobytes()
        blobs.append(
            {
                "name": name,
                "dtype": _le_dtype(arr).str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        chunks.append(data)
        offset += len(data)

    header = json.dumps(
        {"kind": kind, "meta": meta, "blobs": blobs}, sort_keys=True
    ).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "wb") as outfile:
            outfile.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
            outfile.write(header)
            for chunk in chunks:
                outfile.write(chunk)
    except OSError as e:
        raise ContainerError(path, f"write failed: {e}") from e
    return path


# --------------------------------------------------------------------
def read_container(
    path: PathSpec, kind: str | None = None
) -> tuple[JsonDict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ContainerError(path, f"read failed: {e}") from e

    if len(raw) < _PREFIX.size:
        raise ContainerError(path, "file is truncated")
    magic, version, length = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise ContainerError(path, "not a uvhfield container")
    if version > VERSION:
        raise ContainerError(path, f"unsupported container version {version}")

    start = _PREFIX.size
    try:
        header: dict[str, Any] = json.loads(raw[start : start + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerError(path, "header is truncated or corrupt") from e
    if kind is not None and header.get("kind") != kind:
        raise ContainerError(path, f'expected a "{kind}", found "{header.get("kind")}"')

    base = start + length
    arrays = {}
    for blob in header["blobs"]:
        begin = base + blob["offset"]
        data = raw[begin : begin + blob["nbytes"]]
        if len(data) != blob["nbytes"]:
            raise ContainerError(path, f'blob "{blob["name"]}" is truncated')
        arr = np.frombuffer(data, dtype=np.dtype(blob["dtype"]))
        arrays[blob["name"]] = arr.reshape(blob["shape"]).astype(
            arr.dtype.newbyteorder("="), copy=True
        )
    return header["meta"], arrays
