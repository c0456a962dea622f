"""Self-supervised encoder training by slot-based feature reconstruction.

Backbone features are frozen, so they are computed once per clip up front;
each optimization step reconstructs every frame of one clip, with all
frames sharing the same initial slots. Losses are logged per epoch and are
reproducible run-to-run for a fixed seed on one machine.
"""

from __future__ import annotations

import numpy as np
import torch

from .backbone import FrameBatch, extract_features
from .config import ExperimentConfig
from .data import VideoClipSet
from .encoder import EncoderCheckpoint
from .exceptions import TrainingDivergedError, ValidationError


def clip_features(clip, cfg: ExperimentConfig, chunk: int = 32):
    """Frozen backbone features for every frame of a clip: (T, L, D) tensor."""
    feats = []
    grid_shape = None
    for start in range(0, len(clip.frames), chunk):
        stop = min(start + chunk, len(clip.frames))
        px = np.stack([clip.frames.get(t) for t in range(start, stop)]).astype(np.float32) / 255.0
        ids = [clip.frames.frame_id(t) for t in range(start, stop)]
        grid = extract_features(FrameBatch(px, ids), cfg.backbone)
        grid_shape = grid.grid_shape
        feats.append(grid.flat())
    return torch.from_numpy(np.concatenate(feats)), grid_shape


def train_encoder(dataset: VideoClipSet, cfg: ExperimentConfig) -> EncoderCheckpoint:
    """Minimize per-frame feature-reconstruction MSE over the clip set."""
    if len(dataset) == 0:
        raise ValidationError("encoder training needs a non-empty clip set")
    tcfg = cfg.training

    clips = []
    grid_shape = None
    for clip in dataset:
        feats, shape = clip_features(clip, cfg)
        if grid_shape is None:
            grid_shape = shape
        elif shape != grid_shape:
            raise ValidationError(
                f"clip {clip.clip_id}: grid {shape} differs from {grid_shape}"
            )
        clips.append(feats)

    checkpoint = EncoderCheckpoint.create(cfg.encoder, clips[0].shape[-1])
    model = checkpoint.model
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=tcfg.lr)
    rng = np.random.default_rng(tcfg.seed)
    noise_gen = torch.Generator().manual_seed(tcfg.seed)

    loss_log = []
    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(clips))
        epoch_loss = 0.0
        for batch_idx, clip_idx in enumerate(order):
            feats = clips[clip_idx]
            init_noise = None
            if cfg.encoder.stochastic_init:
                init_noise = 0.1 * torch.randn(
                    cfg.encoder.n_slots, cfg.encoder.d_what, generator=noise_gen)
            loss = model.reconstruction_loss(feats, grid_shape, cfg.encoder.n_iter, init_noise)
            if not torch.isfinite(loss):
                norms = {name: float(p.detach().norm())
                         for name, p in model.named_parameters()}
                raise TrainingDivergedError("encoder loss became non-finite",
                                            epoch=epoch, batch=batch_idx, param_norms=norms)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tcfg.grad_clip)
            opt.step()
            epoch_loss += float(loss.detach())
        loss_log.append(epoch_loss / len(clips))
    model.eval()
    checkpoint.loss_log = loss_log
    return checkpoint
