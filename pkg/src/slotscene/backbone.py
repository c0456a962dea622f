"""Per-frame patch-grid feature extraction.

Two backbones sit behind one interface: a deterministic synthetic extractor
(patch statistics through a fixed random projection) used for tests and
desk-scale training, and a read-only cache of features produced offline by
an external pretrained vision transformer. Both return a `FeatureGrid` of
shape batch x H_att x W_att x D_feat.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import BackboneConfig
from .exceptions import MissingFeatureError, ShapeError, ValidationError
from .tensorio import canonical_json

CACHE_VERSION = 1


@dataclass
class FrameBatch:
    """RGB frames in [0,1], batch x H x W x 3, plus per-frame unique ids."""

    pixels: np.ndarray
    frame_ids: list[str]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 4 or px.shape[-1] != 3:
            raise ShapeError(f"pixels must be (batch, H, W, 3), got {px.shape}")
        if len(self.frame_ids) != px.shape[0]:
            raise ShapeError(
                f"{len(self.frame_ids)} frame ids for {px.shape[0]} frames"
            )
        if len(set(self.frame_ids)) != len(self.frame_ids):
            raise ValidationError("frame ids must be unique within a batch")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise ValidationError("pixel values must be finite and within [0,1]")
        self.pixels = px

    @property
    def batch(self) -> int:
        return self.pixels.shape[0]

    @property
    def hw(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]


@dataclass
class FeatureGrid:
    """Backbone embeddings on the patch grid: batch x H_att x W_att x D_feat."""

    features: np.ndarray
    grid_shape: tuple[int, int] = field(init=False)
    feature_dim: int = field(init=False)

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float32)
        if feats.ndim != 4:
            raise ShapeError(f"features must be (batch, H_att, W_att, D_feat), got {feats.shape}")
        if not np.isfinite(feats).all():
            raise ValidationError("feature grid contains non-finite entries")
        self.features = feats
        self.grid_shape = (feats.shape[1], feats.shape[2])
        self.feature_dim = feats.shape[3]

    @property
    def batch(self) -> int:
        return self.features.shape[0]

    def flat(self) -> np.ndarray:
        """(batch, H*W, D) view for attention-style consumers."""
        b, h, w, d = self.features.shape
        return self.features.reshape(b, h * w, d)


def _patch_projection(seed: int, feature_dim: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    weight = rng.standard_normal((5, feature_dim)).astype(np.float32)
    bias = (0.1 * rng.standard_normal(feature_dim)).astype(np.float32)
    return weight, bias


def _synthetic_features(frames: FrameBatch, cfg: BackboneConfig) -> np.ndarray:
    b = frames.batch
    h, w = frames.hw
    p = cfg.patch_size
    gh, gw = h // p, w // p
    # Per-patch mean RGB: reshape to (b, gh, p, gw, p, 3) and average patch pixels.
    patches = frames.pixels.reshape(b, gh, p, gw, p, 3)
    mean_rgb = patches.mean(axis=(2, 4), dtype=np.float64)  # (b, gh, gw, 3)
    # Normalized patch-center coordinates in [0,1].
    cy = (np.arange(gh, dtype=np.float64) + 0.5) / gh
    cx = (np.arange(gw, dtype=np.float64) + 0.5) / gw
    coords = np.stack(np.broadcast_arrays(cy[:, None], cx[None, :]), axis=-1)  # (gh, gw, 2)
    coords = np.broadcast_to(coords, (b, gh, gw, 2))
    stats = np.concatenate([mean_rgb, coords], axis=-1).astype(np.float32)  # (b, gh, gw, 5)
    weight, bias = _patch_projection(cfg.seed, cfg.feature_dim)
    return np.tanh(stats @ weight + bias)


def extract_features(frames: FrameBatch, backbone: BackboneConfig) -> FeatureGrid:
    """Map frames to patch-grid embeddings via the configured backbone.

    Deterministic for fixed inputs and config. With kind='cache', the
    returned features are bit-identical to the stored cache entries.
    """
    backbone.validate()
    h, w = frames.hw
    if h % backbone.patch_size or w % backbone.patch_size:
        raise ShapeError(
            f"frame dims {h}x{w} not divisible by patch size {backbone.patch_size}"
        )
    if backbone.kind == "synthetic":
        return FeatureGrid(_synthetic_features(frames, backbone))
    cache = FeatureCache.open(backbone.cache_path)
    gh, gw = h // backbone.patch_size, w // backbone.patch_size
    if cache.grid_shape != (gh, gw):
        raise ValidationError(
            f"cache grid {cache.grid_shape} does not match frame grid {(gh, gw)}"
        )
    feats = np.stack([cache.load(fid) for fid in frames.frame_ids])
    return FeatureGrid(feats)


@dataclass
class CacheManifest:
    grid_shape: tuple[int, int]
    feature_dim: int
    count: int
    path: Path


class FeatureCache:
    """Write-once, read-many on-disk feature store.

    Layout: <dir>/manifest.json plus one raw f32le blob per frame, row-major
    (H_att, W_att, D_feat). Any external tool can produce it.
    """

    def __init__(self, root: Path, manifest: dict):
        self.root = root
        self.manifest = manifest
        self.grid_shape = (manifest["grid_h"], manifest["grid_w"])
        self.feature_dim = manifest["feature_dim"]
        self._files = {fr["id"]: fr["file"] for fr in manifest["frames"]}

    @classmethod
    def open(cls, path: str | Path) -> "FeatureCache":
        root = Path(path)
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise ValidationError(f"feature cache manifest not found: {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("version") != CACHE_VERSION:
            raise ValidationError(
                f"unsupported cache version {manifest.get('version')} (expected {CACHE_VERSION})"
            )
        if manifest.get("dtype") != "f32le":
            raise ValidationError(f"unsupported cache dtype {manifest.get('dtype')!r}")
        return cls(root, manifest)

    def load(self, frame_id: str) -> np.ndarray:
        if frame_id not in self._files:
            raise MissingFeatureError(frame_id)
        gh, gw = self.grid_shape
        expected = gh * gw * self.feature_dim
        raw = np.fromfile(self.root / self._files[frame_id], dtype="<f4")
        if raw.size != expected:
            raise ValidationError(
                f"cache blob for {frame_id!r} has {raw.size} floats, manifest implies {expected}"
            )
        return raw.reshape(gh, gw, self.feature_dim)


def write_feature_cache(frame_ids: list[str], features: FeatureGrid, path: str | Path) -> CacheManifest:
    """Persist one feature grid per frame id; returns the manifest summary."""
    if len(frame_ids) != features.batch:
        raise ShapeError(f"{len(frame_ids)} ids for {features.batch} feature grids")
    if len(set(frame_ids)) != len(frame_ids):
        raise ValidationError("duplicate frame id in cache write")
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, fid in enumerate(frame_ids):
        fname = f"{fid}.f32"
        np.ascontiguousarray(features.features[i], dtype="<f4").tofile(root / fname)
        entries.append({"id": fid, "file": fname})
    gh, gw = features.grid_shape
    manifest = {
        "version": CACHE_VERSION,
        "grid_h": gh,
        "grid_w": gw,
        "feature_dim": features.feature_dim,
        "dtype": "f32le",
        "frames": entries,
    }
    (root / "manifest.json").write_text(canonical_json(manifest) + "\n")
    return CacheManifest(grid_shape=(gh, gw), feature_dim=features.feature_dim,
                         count=len(entries), path=root)
