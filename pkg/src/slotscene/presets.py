"""Frozen experiment presets.

`fixture103` is the bundled benchmark recipe: 103 scripted-expert pouring
trajectories whose noise schedule was calibrated once so that exactly 82
succeed and 21 fail, with 12-bead reward granularity. The generator is
deterministic, so the recipe plus seed *is* the dataset. Desk-scale frame
and feature sizes keep the full protocol runnable on a laptop CPU while the
representation keeps its standard 4 x (128 + 100) layout.
"""

from __future__ import annotations

import dataclasses

from .config import (BackboneConfig, BCConfig, EncoderConfig, EnvConfig, EvalConfig,
                     ExperimentConfig, ExpertConfig, IQLConfig, RepresentationConfig)

FIXTURE_N_TRAJ = 103
FIXTURE_SEED = 7


def fixture_env() -> EnvConfig:
    return EnvConfig(render_h=168, render_w=252)


def fixture_expert() -> ExpertConfig:
    # First 82 trajectories: increasing action noise, all still land beads
    # (a handful only partially). Last 21: the hover target is biased well
    # past the container wall, so every pour misses. Calibrated once against
    # FIXTURE_SEED, then frozen (verified in tests/test_data.py).
    return ExpertConfig(
        noise_levels=(0.015, 0.025, 0.026, 0.05),
        noise_counts=(42, 25, 15, 0),
        bias_levels=(0.0, 0.0, 0.0, -0.3),
    )


def fixture_config() -> ExperimentConfig:
    """Config used to generate and consume the bundled 103-trajectory fixture."""
    return ExperimentConfig(
        backbone=BackboneConfig(kind="synthetic", seed=0, patch_size=14, feature_dim=64),
        encoder=EncoderConfig(n_slots=8, d_what=128, n_iter=3, k_merged=4, seed=0),
        representation=RepresentationConfig(softmax_scale=5.0),
        bc=BCConfig(epochs=40, hidden=(256, 256)),
        iql=IQLConfig(steps=4000, batch=64, hidden=(64, 64), gamma=0.98),
        env=fixture_env(),
        expert=fixture_expert(),
        eval=EvalConfig(n_rollouts=100, n_agents=5, seed=0),
    )


def pretrain_clip_config(epochs: int = 40) -> ExperimentConfig:
    """Desk-scale encoder fine-tuning setup over the fixture's 8-clip subset."""
    cfg = fixture_config()
    return dataclasses.replace(
        cfg, training=dataclasses.replace(cfg.training, epochs=epochs, lr=4e-4, seed=0))


PRESETS = {
    "fixture103": fixture_config,
}
