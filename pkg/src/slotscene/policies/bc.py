"""Behavior cloning with action-chunked horizons.

The policy network maps a scene representation concatenated with the current
joint state (R_dim + 7 inputs) to the next h joint-target rows (7h outputs),
trained with mean-squared error against expert chunks. Only trajectories
with strictly positive reward are ever read.
"""

from __future__ import annotations

import numpy as np
import torch

from ..config import ExperimentConfig
from ..data import filter_successful
from ..encoder import EncoderCheckpoint
from ..exceptions import ValidationError
from .common import (EncodedTrajectories, Normalizer, PolicyArtifact,
                     encode_trajectories, make_mlp)


def chunk_targets(actions: np.ndarray, horizon: int) -> np.ndarray:
    """(T, 7) actions -> (T, horizon*7) future chunks, end-padded with the
    final action so supervision stays defined at trajectory tails."""
    t = actions.shape[0]
    padded = np.concatenate([actions, np.repeat(actions[-1:], horizon - 1, axis=0)]) \
        if horizon > 1 else actions
    return np.stack([padded[i:i + horizon].reshape(-1) for i in range(t)])


def bc_train(dataset, encoder: EncoderCheckpoint, cfg: ExperimentConfig,
             encoded: EncodedTrajectories | None = None) -> PolicyArtifact:
    """Train a BC policy on the successful trajectories of `dataset`.

    `encoded` may carry precomputed policy inputs for the *successful*
    subset (callers that encode once and train many seeds); otherwise the
    successful trajectories are encoded here, so failed trajectories are
    never touched.
    """
    bc = cfg.bc
    bc.validate()
    if encoded is None:
        successes = filter_successful(dataset)
        if len(successes) == 0:
            raise ValidationError("BC needs at least one trajectory with reward > 0")
        encoded = encode_trajectories(successes, encoder, cfg)
    if not encoded.inputs:
        raise ValidationError("BC received an empty encoded dataset")
    if all(inp.shape[0] < 1 for inp in encoded.inputs):
        raise ValidationError("BC dataset has no usable steps")
    max_len = max(inp.shape[0] for inp in encoded.inputs)
    if bc.horizon > max_len:
        raise ValidationError(
            f"bc.horizon {bc.horizon} exceeds every trajectory length (max {max_len})"
        )

    x = np.concatenate(encoded.inputs)
    y = np.concatenate([chunk_targets(a, bc.horizon) for a in encoded.actions])
    normalizer = Normalizer.fit(x, enabled=bc.normalize_inputs)
    xn = torch.from_numpy(normalizer.apply(x))
    yt = torch.from_numpy(y.astype(np.float32))

    in_dim, out_dim = x.shape[1], 7 * bc.horizon
    torch.manual_seed(bc.seed)
    net = make_mlp(in_dim, bc.hidden, out_dim)
    opt = torch.optim.Adam(net.parameters(), lr=bc.lr)
    rng = np.random.default_rng(bc.seed)

    n = xn.shape[0]
    loss_log = []
    for epoch in range(bc.epochs):
        order = rng.permutation(n)
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, n, bc.batch):
            idx = torch.from_numpy(order[start:start + bc.batch])
            pred = net(xn[idx])
            loss = torch.mean((pred - yt[idx]) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        loss_log.append(epoch_loss / max(n_batches, 1))
    net.eval()

    meta = {
        "input_dim": in_dim,
        "horizon": bc.horizon,
        "replan_every": bc.replan_every,
        "encoder_fingerprint": encoded.encoder_fingerprint,
        "encoder_digest": encoded.encoder_digest,
        "config_fingerprint": cfg.fingerprint(),
        "seed": bc.seed,
        "net_specs": {"policy": {"in": in_dim, "hidden": list(bc.hidden), "out": out_dim}},
    }
    return PolicyArtifact(kind="bc", nets={"policy": net}, normalizer=normalizer,
                          meta=meta, loss_log=loss_log)


def bc_predict(policy_input: np.ndarray, artifact: PolicyArtifact) -> np.ndarray:
    """Deterministic forward pass reshaped to (h, 7)."""
    if artifact.kind != "bc":
        raise ValidationError(f"bc_predict needs a BC artifact, got kind={artifact.kind!r}")
    return artifact.predict_chunk(policy_input)
