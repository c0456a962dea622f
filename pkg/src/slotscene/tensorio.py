"""Single-file tensor container: JSON header + named f32 little-endian blobs.

Byte layout (documented in docs/formats.md):

    bytes 0..7    magic b"SLSCTNS1"
    bytes 8..15   header length N, uint64 little-endian
    bytes 16..16+N-1  header JSON, utf-8, canonical (sorted keys, compact)
    remainder     tensor payloads, row-major float32 little-endian,
                  concatenated in the order listed under header["tensors"]

The header is {"meta": <caller metadata>, "tensors": [{"name", "shape"}...]}.
Loading validates the magic, payload size and tensor shapes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import ValidationError

MAGIC = b"SLSCTNS1"


def canonical_json(obj) -> str:
    """Deterministic JSON encoding used everywhere a hash or byte-identity matters."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_tensors(path: str | Path, meta: dict, tensors: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    header = canonical_json({"meta": meta, "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_tensors(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValidationError(f"{path}: not a tensor container (bad magic)")
    (header_len,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    offset = 16 + header_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape, dtype=np.int64)) if shape else 4
        if offset + nbytes > len(raw):
            raise ValidationError(f"{path}: truncated payload for tensor {entry['name']!r}")
        flat = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset)
        tensors[entry["name"]] = flat.reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise ValidationError(f"{path}: {len(raw) - offset} trailing bytes after tensor payload")
    return header["meta"], tensors
