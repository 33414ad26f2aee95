"""Flat little-endian float64 arrays behind a JSON header.

Layout::

    b"CMRL" | u32 LE header length | header JSON (utf-8) | float64 LE data

The header always carries ``"arrays"``: the shape of each array, in order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np

MAGIC = b"CMRL"
_LEN = struct.Struct("<I")


class CheckpointError(ValueError):
    pass


def pack_arrays(arrays: Sequence[np.ndarray], header: dict[str, Any] | None = None) -> bytes:
    meta = dict(header or {})
    meta["arrays"] = [list(np.shape(a)) for a in arrays]
    head = json.dumps(meta, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    return MAGIC + _LEN.pack(len(head)) + head + body


def unpack_arrays(data: bytes | memoryview) -> tuple[dict[str, Any], list[np.ndarray]]:
    data = memoryview(data)
    if bytes(data[:4]) != MAGIC:
        raise CheckpointError("bad magic")
    (n,) = _LEN.unpack(data[4:8])
    header = json.loads(bytes(data[8 : 8 + n]))
    pos = 8 + n
    arrays = []
    for shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if pos + nbytes > len(data):
            raise CheckpointError("truncated data")
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").astype(np.float64).reshape(shape)
        arrays.append(arr)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{len(data) - pos} trailing bytes")
    return header, arrays


def dump_params(theta: np.ndarray, lengths: Sequence[int], hyper: dict | None = None, **extra: Any) -> bytes:
    """Stacked ``(M, d)`` parameters with their unpadded block lengths."""
    header = {"kind": "params", "lengths": list(lengths), "hyper": hyper or {}, **extra}
    return pack_arrays([theta], header)


def load_params(data: bytes) -> tuple[np.ndarray, dict[str, Any]]:
    header, arrays = unpack_arrays(data)
    if header.get("kind") != "params" or len(arrays) != 1:
        raise CheckpointError("not a parameter checkpoint")
    return arrays[0], header


def save(path: str | Path, theta: np.ndarray, lengths: Sequence[int], hyper: dict | None = None, **extra: Any) -> None:
    Path(path).write_bytes(dump_params(theta, lengths, hyper, **extra))


def load(path: str | Path) -> tuple[np.ndarray, dict[str, Any]]:
    return load_params(Path(path).read_bytes())
