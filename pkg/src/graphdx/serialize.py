"""Byte-stable binary container for graphs, checkpoints, and retrieval indexes.

Layout: magic ``GDX1``, little-endian u32 header length, a canonical JSON
header (sorted keys, no whitespace), then the raw C-order bytes of each
array in header order.  Identical inputs always produce identical bytes,
which the determinism contracts rely on.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDX1"
FORMAT_VERSION = 1


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def pack(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    """Serialize ``meta`` plus named arrays into a single byte string."""
    names = sorted(arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "arrays": [
            {"name": n, "dtype": str(arrays[n].dtype), "shape": list(arrays[n].shape)}
            for n in names
        ],
    }
    head = _canonical_json(header)
    parts = [MAGIC, struct.pack("<I", len(head)), head]
    for n in names:
        parts.append(np.ascontiguousarray(arrays[n]).tobytes())
    return b"".join(parts)


def unpack(blob: bytes, expect_kind: str | None = None):
    """Inverse of :func:`pack`; returns ``(meta, arrays)``."""
    if blob[:4] != MAGIC:
        raise ValueError("not a GDX container")
    (hlen,) = struct.unpack("<I", blob[4:8])
    header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    if header["format_version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {header['format_version']}")
    if expect_kind is not None and header["kind"] != expect_kind:
        raise ValueError(f"expected {expect_kind} container, got {header['kind']}")
    arrays = {}
    off = 8 + hlen
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        size = dtype.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dtype.itemsize
        n_items = int(np.prod(shape, dtype=np.int64))
        size = dtype.itemsize * n_items
        arr = np.frombuffer(blob[off : off + size], dtype=dtype).reshape(shape).copy()
        arrays[spec["name"]] = arr
        off += size
    return header["meta"], arrays


def write_container(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray],
                    manifest: str | None = None) -> None:
    """Write a container and, optionally, a human-readable text manifest."""
    path = Path(path)
    path.write_bytes(pack(kind, meta, arrays))
    if manifest is not None:
        path.with_suffix(path.suffix + ".manifest.txt").write_text(manifest, encoding="utf-8")


def read_container(path: str | Path, expect_kind: str | None = None):
    return unpack(Path(path).read_bytes(), expect_kind)


def digest(blob: bytes) -> str:
    return hashlib.sha256(blob).hexdigest()
