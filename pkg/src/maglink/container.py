"""Versioned binary container for named arrays plus JSON metadata.

Layout: magic ``MLC1`` | u32 meta length | meta JSON (sorted keys) |
per-array payloads in meta order | crc32 over everything before it.
Bytes are fully determined by the content, so identical models serialize
identically.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

__all__ = ["ContainerError", "write_container", "read_container"]

_MAGIC = b"MLC1"
_DTYPES = {"f8": "<f8", "f4": "<f4", "i8": "<i8"}


class ContainerError(ValueError):
    pass


def write_container(
    path: str | Path,
    kind: str,
    version: int,
    meta: dict,
    arrays: dict[str, np.ndarray],
) -> None:
    descriptors = []
    payloads = []
    for name in sorted(arrays):
        arr = np.asarray(arrays[name])
        code = {np.float64: "f8", np.float32: "f4", np.int64: "i8"}.get(arr.dtype.type)
        if code is None:
            arr = arr.astype(np.float64)
            code = "f8"
        arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
        descriptors.append({"name": name, "shape": list(arr.shape), "dtype": code})
        payloads.append(arr.tobytes(order="C"))
    doc = {"kind": kind, "version": version, "meta": meta, "arrays": descriptors}
    meta_bytes = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = _MAGIC + struct.pack("<I", len(meta_bytes)) + meta_bytes + b"".join(payloads)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def read_container(
    path: str | Path, kind: str, version: int | None = None
) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != _MAGIC:
        raise ContainerError(f"{path}: not a container file")
    (crc_stored,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) != crc_stored:
        raise ContainerError(f"{path}: checksum mismatch")
    (meta_len,) = struct.unpack_from("<I", raw, 4)
    meta_end = 8 + meta_len
    doc = json.loads(raw[8:meta_end].decode("utf-8"))
    if doc.get("kind") != kind:
        raise ContainerError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    if version is not None and doc.get("version") != version:
        raise ContainerError(f"{path}: unsupported version {doc.get('version')}")
    arrays: dict[str, np.ndarray] = {}
    offset = meta_end
    for desc in doc["arrays"]:
        dtype = np.dtype(_DTYPES[desc["dtype"]])
        count = int(np.prod(desc["shape"])) if desc["shape"] else 1
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw) - 4:
            raise ContainerError(f"{path}: truncated array {desc['name']!r}")
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        arrays[desc["name"]] = arr.reshape(desc["shape"]).copy()
        offset += nbytes
    if offset != len(raw) - 4:
        raise ContainerError(f"{path}: trailing bytes after arrays")
    return doc["meta"], arrays
