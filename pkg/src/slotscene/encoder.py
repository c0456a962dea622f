"""Slot attention encoder: iterative binding, shared temporal initialization,
and a spatial-broadcast feature decoder for self-supervised training.

The softmax over the slot axis uses a sorted-operand sum so that permuting
the initial slot vectors permutes outputs bitwise (float addition is order
sensitive; sorting makes the reduction order a function of the values only).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .backbone import FeatureGrid
from .config import EncoderConfig, sha256_hex
from .exceptions import ShapeError, ValidationError
from .tensorio import canonical_json, load_tensors, save_tensors

ATTN_EPS = 1e-8


@dataclass
class SlotSet:
    """Slot vectors, (N, D_what) for one frame or (B, N, D_what) batched."""

    slots: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.slots, dtype=np.float32)
        if arr.ndim not in (2, 3):
            raise ShapeError(f"slots must be (N, D) or (B, N, D), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("slot vectors contain non-finite entries")
        self.slots = arr

    @property
    def n_slots(self) -> int:
        return self.slots.shape[-2]

    @property
    def d_what(self) -> int:
        return self.slots.shape[-1]

    def __getitem__(self, i: int) -> "SlotSet":
        if self.slots.ndim != 3:
            raise ShapeError("indexing requires a batched SlotSet")
        return SlotSet(self.slots[i])


@dataclass
class AttentionMaps:
    """Softmax-over-slots attention, (N, H, W) or (B, N, H, W).

    At every grid location the weights sum to 1 over slots.
    """

    weights: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.weights, dtype=np.float32)
        if arr.ndim not in (3, 4):
            raise ShapeError(f"weights must be (N, H, W) or (B, N, H, W), got {arr.shape}")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValidationError("attention weights must lie in [0,1]")
        sums = arr.sum(axis=-3)
        if not np.allclose(sums, 1.0, atol=1e-5):
            raise ValidationError("attention weights must sum to 1 over slots per location")
        self.weights = arr

    @property
    def n_slots(self) -> int:
        return self.weights.shape[-3]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.weights.shape[-2], self.weights.shape[-1]

    def __getitem__(self, i: int) -> "AttentionMaps":
        if self.weights.ndim != 4:
            raise ShapeError("indexing requires batched AttentionMaps")
        return AttentionMaps(self.weights[i])


def softmax_slots(logits: torch.Tensor) -> torch.Tensor:
    """Softmax over dim 1 with a permutation-invariant denominator.

    Operands of the normalizing sum are sorted by value first, so the float
    result does not depend on slot order.
    """
    m = logits.amax(dim=1, keepdim=True)
    e = torch.exp(logits - m)
    ordered, _ = torch.sort(e, dim=1)
    return e / ordered.sum(dim=1, keepdim=True)


def positional_encoding(grid_shape: tuple[int, int], n_freqs: int,
                        dtype=torch.float32) -> torch.Tensor:
    """Fixed sinusoidal 2-D code, (H*W, 4*n_freqs); coords normalized to [0,1]."""
    gh, gw = grid_shape
    ys = (torch.arange(gh, dtype=dtype) + 0.5) / gh
    xs = (torch.arange(gw, dtype=dtype) + 0.5) / gw
    yy, xx = torch.meshgrid(ys, xs, indexing="ij")
    feats = []
    for j in range(n_freqs):
        f = math.pi * (2.0 ** j)
        feats += [torch.sin(f * yy), torch.cos(f * yy), torch.sin(f * xx), torch.cos(f * xx)]
    return torch.stack(feats, dim=-1).reshape(gh * gw, 4 * n_freqs)


class SlotEncoderNet(nn.Module):
    """Iterative slot attention over patch features plus a broadcast decoder."""

    def __init__(self, cfg: EncoderConfig, d_feat: int):
        super().__init__()
        self.cfg = cfg
        self.d_feat = d_feat
        d = cfg.d_what
        gen = torch.Generator().manual_seed(cfg.seed)

        def init_linear(layer: nn.Linear):
            nn.init.xavier_uniform_(layer.weight, generator=gen)
            if layer.bias is not None:
                nn.init.zeros_(layer.bias)
            return layer

        self.slot_init = nn.Parameter(
            torch.empty(cfg.n_slots, d).uniform_(-1.0, 1.0, generator=gen)
            * (1.0 / math.sqrt(d))
        )
        self.norm_inputs = nn.LayerNorm(d_feat)
        self.norm_slots = nn.LayerNorm(d)
        self.norm_mlp = nn.LayerNorm(d)
        self.proj_q = init_linear(nn.Linear(d, d, bias=False))
        self.proj_k = init_linear(nn.Linear(d_feat, d, bias=False))
        self.proj_v = init_linear(nn.Linear(d_feat, d, bias=False))
        self.gru = nn.GRUCell(d, d)
        with torch.no_grad():
            for name, p in self.gru.named_parameters():
                if "weight" in name:
                    nn.init.xavier_uniform_(p, generator=gen)
                else:
                    p.zero_()
        hidden = cfg.mlp_hidden_dim
        self.mlp = nn.Sequential(
            init_linear(nn.Linear(d, hidden)), nn.ReLU(), init_linear(nn.Linear(hidden, d))
        )
        pos_dim = 4 * cfg.decoder_posenc_freqs
        layers: list[nn.Module] = [init_linear(nn.Linear(d + pos_dim, cfg.decoder_hidden)), nn.ReLU()]
        for _ in range(cfg.decoder_layers - 2):
            layers += [init_linear(nn.Linear(cfg.decoder_hidden, cfg.decoder_hidden)), nn.ReLU()]
        layers.append(init_linear(nn.Linear(cfg.decoder_hidden, d_feat + 1)))
        self.decoder = nn.Sequential(*layers)

    def initial_slots(self, batch: int, init_noise: torch.Tensor | None = None) -> torch.Tensor:
        """Shared initial slots, identical for every frame of a clip."""
        slots = self.slot_init
        if init_noise is not None:
            slots = slots + init_noise
        return slots.unsqueeze(0).expand(batch, -1, -1)

    def bind(self, feats: torch.Tensor, n_iter: int,
             init_noise: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """Run n_iter attention rounds; feats is (B, L, D_feat).

        Returns final slots (B, N, D_what) and final-round attention (B, N, L).
        """
        b = feats.shape[0]
        scale = 1.0 / math.sqrt(self.cfg.d_what)
        x = self.norm_inputs(feats)
        k = self.proj_k(x)
        v = self.proj_v(x)
        slots = self.initial_slots(b, init_noise)
        attn = None
        for _ in range(n_iter):
            slots_prev = slots
            q = self.proj_q(self.norm_slots(slots))
            logits = torch.bmm(q, k.transpose(1, 2)) * scale  # (B, N, L)
            attn = softmax_slots(logits)
            w = attn + ATTN_EPS
            w = w / w.sum(dim=2, keepdim=True)
            updates = torch.bmm(w, v)
            slots = self.gru(
                updates.reshape(-1, self.cfg.d_what), slots_prev.reshape(-1, self.cfg.d_what)
            ).reshape(b, self.cfg.n_slots, self.cfg.d_what)
            slots = slots + self.mlp(self.norm_mlp(slots))
        return slots, attn

    def decode(self, slots: torch.Tensor, grid_shape: tuple[int, int]) -> tuple[torch.Tensor, torch.Tensor]:
        """Spatial-broadcast decode of (B, K, D_what) slots.

        Returns per-location reconstruction (B, L, D_feat) and the per-slot
        mixing masks alpha (B, K, L), softmaxed over slots.
        """
        b, k, d = slots.shape
        if d != self.cfg.d_what:
            raise ShapeError(f"slot dim {d} != configured d_what {self.cfg.d_what}")
        gh, gw = grid_shape
        pos = positional_encoding(grid_shape, self.cfg.decoder_posenc_freqs,
                                  dtype=slots.dtype).to(slots.device)
        l = gh * gw
        z = torch.cat(
            [slots.unsqueeze(2).expand(b, k, l, d), pos.expand(b, k, l, -1)], dim=-1
        )
        out = self.decoder(z)  # (B, K, L, d_feat + 1)
        alpha = torch.softmax(out[..., -1], dim=1)
        recon = (alpha.unsqueeze(-1) * out[..., : self.d_feat]).sum(dim=1)
        return recon, alpha

    def reconstruction_loss(self, feats: torch.Tensor, grid_shape: tuple[int, int],
                            n_iter: int, init_noise: torch.Tensor | None = None) -> torch.Tensor:
        """Mean-squared error of decode(bind(feats)) against feats, (B, L, D_feat) in."""
        slots, _ = self.bind(feats, n_iter, init_noise)
        recon, _ = self.decode(slots, grid_shape)
        return torch.mean((recon - feats) ** 2)


@dataclass
class EncoderCheckpoint:
    """Trained (or freshly initialized) encoder plus its config fingerprint."""

    config: EncoderConfig
    d_feat: int
    model: SlotEncoderNet
    loss_log: list = field(default_factory=list)

    @classmethod
    def create(cls, config: EncoderConfig, d_feat: int) -> "EncoderCheckpoint":
        config.validate()
        torch.manual_seed(config.seed)
        model = SlotEncoderNet(config, d_feat)
        model.eval()
        return cls(config=config, d_feat=d_feat, model=model)

    @property
    def fingerprint(self) -> str:
        """Hash of the architecture hyperparameters (not the weights)."""
        arch = {
            "n_slots": self.config.n_slots,
            "d_what": self.config.d_what,
            "n_iter": self.config.n_iter,
            "mlp_hidden": self.config.mlp_hidden_dim,
            "decoder_hidden": self.config.decoder_hidden,
            "decoder_layers": self.config.decoder_layers,
            "decoder_posenc_freqs": self.config.decoder_posenc_freqs,
            "d_feat": self.d_feat,
            "seed": self.config.seed,
        }
        return sha256_hex(canonical_json(arch))

    def weights_digest(self) -> str:
        parts = []
        for name, p in sorted(self.model.state_dict().items()):
            parts.append(name)
            parts.append(np.ascontiguousarray(p.detach().numpy(), dtype="<f4").tobytes().hex())
        return sha256_hex("|".join(parts))

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "encoder-checkpoint",
            "config": {k: (list(v) if isinstance(v, tuple) else v)
                       for k, v in self.config.__dict__.items()},
            "d_feat": self.d_feat,
            "fingerprint": self.fingerprint,
            "loss_log": self.loss_log,
        }
        tensors = {name: p.detach().numpy() for name, p in self.model.state_dict().items()}
        save_tensors(path, meta, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "EncoderCheckpoint":
        meta, tensors = load_tensors(path)
        if meta.get("kind") != "encoder-checkpoint":
            raise ValidationError(f"{path}: not an encoder checkpoint")
        cfg = EncoderConfig(**meta["config"])
        ckpt = cls.create(cfg, meta["d_feat"])
        state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
        ckpt.model.load_state_dict(state)
        ckpt.loss_log = meta.get("loss_log", [])
        if ckpt.fingerprint != meta["fingerprint"]:
            raise ValidationError(f"{path}: fingerprint mismatch after load")
        return ckpt


def bind_slots(features: FeatureGrid, checkpoint: EncoderCheckpoint,
               n_iter: int | None = None) -> tuple[SlotSet, AttentionMaps]:
    """Bind patch features to slots; returns final slots and attention maps.

    Every frame in the batch starts from the checkpoint's shared initial
    slots. Attention is the final-round softmax over the slot axis.
    """
    if n_iter is None:
        n_iter = checkpoint.config.n_iter
    if n_iter < 1:
        raise ValidationError(f"n_iter must be >= 1, got {n_iter}")
    if features.feature_dim != checkpoint.d_feat:
        raise ShapeError(
            f"feature dim {features.feature_dim} != checkpoint d_feat {checkpoint.d_feat}"
        )
    gh, gw = features.grid_shape
    feats = torch.from_numpy(features.flat())
    with torch.no_grad():
        slots, attn = checkpoint.model.bind(feats, n_iter)
    b = features.batch
    return (
        SlotSet(slots.numpy()),
        AttentionMaps(attn.reshape(b, checkpoint.config.n_slots, gh, gw).numpy()),
    )


def decode_slots(slots, checkpoint: EncoderCheckpoint,
                 grid_shape: tuple[int, int]) -> tuple[FeatureGrid, np.ndarray]:
    """Decode slots back to a feature grid; alpha mixes per-slot predictions.

    `slots` may be a SlotSet, a MergedSlots, or a raw (K, D)/(B, K, D) array.
    Alpha columns sum to 1 at every location.
    """
    arr = getattr(slots, "slots", slots)
    arr = np.asarray(arr, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"slots must be (K, D) or (B, K, D), got {arr.shape}")
    gh, gw = grid_shape
    with torch.no_grad():
        recon, alpha = checkpoint.model.decode(torch.from_numpy(arr), grid_shape)
    b, k, _ = arr.shape
    return (
        FeatureGrid(recon.reshape(b, gh, gw, checkpoint.d_feat).numpy()),
        alpha.reshape(b, k, gh, gw).numpy(),
    )
