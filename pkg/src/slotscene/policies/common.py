"""Shared policy plumbing: input encoding, normalization, artifact files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ..backbone import FrameBatch, extract_features
from ..config import ExperimentConfig, sha256_hex
from ..encoder import EncoderCheckpoint, bind_slots
from ..exceptions import FingerprintMismatchError, ShapeError, ValidationError
from ..merging import merge_slots
from ..representation import build_representation
from ..tensorio import canonical_json, load_tensors, save_tensors

STD_FLOOR = 1e-6


def make_mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int) -> nn.Sequential:
    layers: list[nn.Module] = []
    prev = in_dim
    for width in hidden:
        layers += [nn.Linear(prev, width), nn.ReLU()]
        prev = width
    layers.append(nn.Linear(prev, out_dim))
    return nn.Sequential(*layers)


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, enabled: bool = True) -> "Normalizer":
        if not enabled:
            d = x.shape[1]
            return cls(np.zeros(d, np.float32), np.ones(d, np.float32))
        mean = x.mean(axis=0, dtype=np.float64)
        std = np.maximum(x.std(axis=0, dtype=np.float64), STD_FLOOR)
        return cls(mean.astype(np.float32), std.astype(np.float32))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float32)


def frame_representation(pixels: np.ndarray, frame_id: str,
                         encoder: EncoderCheckpoint, cfg: ExperimentConfig) -> np.ndarray:
    """Render pixels (uint8 or [0,1] float) -> flat scene representation."""
    return batch_representations(pixels[None], [frame_id], encoder, cfg)[0]


def batch_representations(pixels: np.ndarray, frame_ids: list[str],
                          encoder: EncoderCheckpoint, cfg: ExperimentConfig) -> np.ndarray:
    """Encode a batch of frames to (B, R_dim) scene representations."""
    px = np.asarray(pixels)
    if px.dtype == np.uint8:
        px = px.astype(np.float32) / 255.0
    frames = FrameBatch(px, frame_ids)
    grid = extract_features(frames, cfg.backbone)
    slot_set, attn = bind_slots(grid, encoder, cfg.encoder.n_iter)
    reps = []
    for i in range(grid.batch):
        merged = merge_slots(slot_set[i], attn[i], cfg.encoder.k_merged)
        reps.append(build_representation(merged, cfg.representation).values)
    return np.stack(reps)


@dataclass
class EncodedTrajectories:
    """Per-trajectory policy inputs aligned with actions and rewards."""

    inputs: list[np.ndarray]    # each (T, R_dim + 7)
    actions: list[np.ndarray]   # each (T, 7)
    rewards: list[float]
    encoder_fingerprint: str
    encoder_digest: str
    input_dim: int


def encode_trajectories(tset, encoder: EncoderCheckpoint, cfg: ExperimentConfig,
                        chunk: int = 32) -> EncodedTrajectories:
    """Precompute PolicyInputs (representation ++ joints) for every step."""
    inputs, actions, rewards = [], [], []
    for traj in tset:
        reps = []
        for start in range(0, traj.length, chunk):
            stop = min(start + chunk, traj.length)
            px = np.stack([traj.frames.get(t) for t in range(start, stop)])
            ids = [traj.frames.frame_id(t) for t in range(start, stop)]
            reps.append(batch_representations(px, ids, encoder, cfg))
        rep = np.concatenate(reps)
        inputs.append(np.concatenate([rep, traj.joints], axis=1).astype(np.float32))
        actions.append(traj.actions)
        rewards.append(traj.reward)
    return EncodedTrajectories(
        inputs=inputs,
        actions=actions,
        rewards=rewards,
        encoder_fingerprint=encoder.fingerprint,
        encoder_digest=encoder.weights_digest(),
        input_dim=inputs[0].shape[1] if inputs else 0,
    )


@dataclass
class PolicyArtifact:
    """Trained policy networks plus everything needed to reuse them safely."""

    kind: str                        # bc | iql
    nets: dict[str, nn.Module]
    normalizer: Normalizer
    meta: dict
    loss_log: list = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.meta["input_dim"]

    @property
    def horizon(self) -> int:
        return self.meta.get("horizon", 1)

    @property
    def replan_every(self) -> int:
        return self.meta.get("replan_every", self.horizon)

    def check_encoder(self, encoder: EncoderCheckpoint) -> None:
        if self.meta["encoder_fingerprint"] != encoder.fingerprint:
            raise FingerprintMismatchError(
                "policy was trained against a different encoder architecture"
            )
        if self.meta["encoder_digest"] != encoder.weights_digest():
            raise FingerprintMismatchError(
                "policy was trained against different encoder weights"
            )

    def predict_chunk(self, policy_input: np.ndarray) -> np.ndarray:
        """Deterministic forward pass -> (h, 7) joint-target chunk."""
        x = np.asarray(policy_input, dtype=np.float32).reshape(-1)
        if x.shape[0] != self.input_dim:
            raise ShapeError(f"policy input length {x.shape[0]} != {self.input_dim}")
        xn = torch.from_numpy(self.normalizer.apply(x[None]))
        net = self.nets["policy"]
        with torch.no_grad():
            out = net(xn).numpy()[0]
        return out.reshape(self.horizon, -1)

    def fingerprint(self) -> str:
        return sha256_hex(canonical_json(
            {k: v for k, v in self.meta.items() if k != "loss_log"}
        ))

    def save(self, path: str | Path) -> None:
        tensors: dict[str, np.ndarray] = {
            "norm.mean": self.normalizer.mean,
            "norm.std": self.normalizer.std,
        }
        for net_name, net in self.nets.items():
            for pname, p in net.state_dict().items():
                tensors[f"{net_name}.{pname}"] = p.detach().numpy()
        meta = dict(self.meta)
        meta.update({"kind": self.kind, "loss_log": self.loss_log})
        save_tensors(path, meta, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyArtifact":
        meta, tensors = load_tensors(path)
        kind = meta.pop("kind", None)
        if kind not in ("bc", "iql"):
            raise ValidationError(f"{path}: not a policy artifact")
        loss_log = meta.pop("loss_log", [])
        normalizer = Normalizer(tensors.pop("norm.mean"), tensors.pop("norm.std"))
        nets: dict[str, nn.Module] = {}
        states: dict[str, dict] = {}
        for net_name, spec in meta["net_specs"].items():
            nets[net_name] = make_mlp(spec["in"], tuple(spec["hidden"]), spec["out"])
            states[net_name] = {}
        for key, arr in tensors.items():
            net_name, pname = key.split(".", 1)
            if net_name not in states:
                raise ValidationError(f"{path}: unexpected tensor {key}")
            states[net_name][pname] = torch.from_numpy(arr)
        for net_name, net in nets.items():
            net.load_state_dict(states[net_name])
            net.eval()
        return cls(kind=kind, nets=nets, normalizer=normalizer, meta=meta, loss_log=loss_log)
