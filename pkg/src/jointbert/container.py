"""Flat binary container for named tensors.

Layout (all integers little-endian)::

    magic      4 bytes   b"JBTC"
    version    uint32
    header_len uint64
    header     UTF-8 JSON: {"dtype", "tensors": [{"name", "shape", "offset", "nbytes"}],
                            "crc32", "metadata"}
    payload    raw little-endian values, tensors back to back in header order
"""
from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import CheckpointError

MAGIC = b"JBTC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sIQ")
_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_params(
    path: str | os.PathLike,
    params: Mapping[str, np.ndarray],
    metadata: Mapping[str, Any] | None = None,
) -> None:
    """Write ``params`` atomically; all arrays must share one float dtype."""
    arrays = {name: np.asarray(a) for name, a in params.items()}
    dtypes = {a.dtype.name for a in arrays.values()}
    if len(dtypes) > 1:
        raise ValueError(f"mixed element types in container: {sorted(dtypes)}")
    dtype_name = dtypes.pop() if dtypes else "float32"
    if dtype_name not in _DTYPES:
        raise ValueError(f"unsupported element type {dtype_name}")
    le = np.dtype(_DTYPES[dtype_name])

    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=le).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "dtype": dtype_name,
        "tensors": entries,
        "crc32": zlib.crc32(payload),
        "metadata": dict(metadata or {}),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    os.replace(tmp, path)


def load_params(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    """Read a container written by :func:`save_params`.

    Returns ``(params, metadata)``. Raises :class:`CheckpointError` on a bad
    magic number, unknown version, truncated payload or checksum mismatch.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read {path}: {exc}") from exc
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"{path}: file too short to be a parameter container")
    magic, version, header_len = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a parameter container (bad magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: container format version {version}, this build reads version {FORMAT_VERSION}"
        )
    start = _PREFIX.size
    if start + header_len > len(blob):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start : start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    payload = blob[start + header_len :]
    if zlib.crc32(payload) != header.get("crc32"):
        raise CheckpointError(f"{path}: payload checksum mismatch (file corrupt or truncated)")

    dtype_name = header.get("dtype")
    if dtype_name not in _DTYPES:
        raise CheckpointError(f"{path}: unsupported element type {dtype_name!r}")
    le = np.dtype(_DTYPES[dtype_name])
    params: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["nbytes"]
        shape = tuple(entry["shape"])
        if lo + n > len(payload) or n != int(np.prod(shape, dtype=np.int64)) * le.itemsize:
            raise CheckpointError(f"{path}: tensor {entry['name']!r} has inconsistent extent")
        arr = np.frombuffer(payload, dtype=le, count=n // le.itemsize, offset=lo)
        params[entry["name"]] = arr.reshape(shape).astype(dtype_name)
    return params, header.get("metadata", {})
