"""Merged slots -> flat "what"+"where" scene representation.

Each merged slot contributes its D_what vector plus a D_where localization
vector: its attention mask resized to 10x10 (bilinear, half-pixel centers),
sharpened by a scaled softmax, and flattened row-major. Under the defaults
(K=4, D_what=128, D_where=100) the representation is 912 floats, laid out
slot-major: [what_0 | where_0 | what_1 | where_1 | ...].
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RepresentationConfig
from .exceptions import ShapeError, ValidationError
from .merging import MergedSlots
from .tensorio import canonical_json


@dataclass
class WhereVector:
    """Flattened, sharpened localization map; strictly positive, sums to 1."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        if arr.ndim != 1:
            raise ShapeError(f"where vector must be 1-d, got shape {arr.shape}")
        if arr.min() <= 0.0 or arr.max() >= 1.0 + 1e-6:
            raise ValidationError("where entries must lie in (0,1)")
        if abs(float(arr.sum()) - 1.0) > 1e-5:
            raise ValidationError("where entries must sum to 1")
        self.values = arr


@dataclass
class SceneRepresentation:
    """Slot-major concatenation of (what, where) blocks."""

    values: np.ndarray
    k: int
    d_what: int
    d_where: int

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float32)
        expected = self.k * (self.d_what + self.d_where)
        if arr.shape != (expected,):
            raise ShapeError(f"representation length {arr.shape} != {expected}")
        if not np.isfinite(arr).all():
            raise ValidationError("representation contains non-finite entries")
        self.values = arr

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def block(self, slot: int) -> tuple[np.ndarray, np.ndarray]:
        """(what, where) slices for one slot."""
        width = self.d_what + self.d_where
        start = slot * width
        return (self.values[start:start + self.d_what],
                self.values[start + self.d_what:start + width])


def resize_mask(mask: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize with half-pixel-center alignment and edge clamping.

    Output sample (i', j') reads input position ((i'+0.5)*H/H' - 0.5,
    (j'+0.5)*W/W' - 0.5), clamped into the valid range, then interpolates
    the four surrounding cells. Output values stay within [min, max] of the
    input.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2:
        raise ShapeError(f"mask must be 2-d, got shape {mask.shape}")
    if not np.isfinite(mask).all():
        raise ValidationError("mask contains non-finite entries")
    out_h, out_w = out_shape
    if out_h < 1 or out_w < 1:
        raise ValidationError(f"output shape must be positive, got {out_shape}")
    in_h, in_w = mask.shape

    ys = np.clip((np.arange(out_h) + 0.5) * (in_h / out_h) - 0.5, 0.0, in_h - 1.0)
    xs = np.clip((np.arange(out_w) + 0.5) * (in_w / out_w) - 0.5, 0.0, in_w - 1.0)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = mask[np.ix_(y0, x0)] * (1 - fx) + mask[np.ix_(y0, x1)] * fx
    bot = mask[np.ix_(y1, x0)] * (1 - fx) + mask[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def scaled_softmax(values: np.ndarray, scale: float) -> np.ndarray:
    """Temperature-sharpened softmax over the whole array; preserves order."""
    if scale <= 0:
        raise ValidationError(f"scale must be > 0, got {scale}")
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValidationError("softmax input contains non-finite entries")
    z = scale * v
    e = np.exp(z - z.max())
    return e / e.sum()


def build_where(mask: np.ndarray, cfg: RepresentationConfig | None = None) -> WhereVector:
    """Resize a merged mask to the where grid, sharpen, flatten row-major."""
    cfg = cfg or RepresentationConfig()
    resized = resize_mask(mask, (cfg.where_h, cfg.where_w))
    sharp = scaled_softmax(resized, cfg.softmax_scale)
    return WhereVector(sharp.reshape(-1))


def build_representation(merged: MergedSlots, cfg: RepresentationConfig | None = None) -> SceneRepresentation:
    """Concatenate per-slot what/where blocks in the merger's group order."""
    cfg = cfg or RepresentationConfig()
    k = merged.k
    d_what = merged.slots.shape[1]
    d_where = cfg.d_where if cfg.include_where else 0
    blocks = []
    for i in range(k):
        blocks.append(merged.slots[i])
        if cfg.include_where:
            blocks.append(build_where(merged.masks[i], cfg).values)
    return SceneRepresentation(
        values=np.concatenate(blocks).astype(np.float32),
        k=k, d_what=d_what, d_where=d_where,
    )


@dataclass
class RepresentationDump:
    header: dict = field(default_factory=dict)
    values: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float32))


def save_representation(rep: SceneRepresentation, scale: float, path: str | Path) -> None:
    """Debug/golden dump: JSON header line + f32le values."""
    header = canonical_json(
        {"k": rep.k, "d_what": rep.d_what, "d_where": rep.d_where, "scale": scale}
    ).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        f.write(np.ascontiguousarray(rep.values, dtype="<f4").tobytes())


def load_representation(path: str | Path) -> RepresentationDump:
    raw = Path(path).read_bytes()
    (n,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + n].decode("utf-8"))
    values = np.frombuffer(raw, dtype="<f4", offset=8 + n).copy()
    expected = header["k"] * (header["d_what"] + header["d_where"])
    if values.size != expected:
        raise ValidationError(f"{path}: {values.size} values, header implies {expected}")
    return RepresentationDump(header=header, values=values)
