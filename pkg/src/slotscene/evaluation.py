"""Rollout evaluation and the 5-seeds x 100-rollouts reporting protocol.

Per-rollout seeds derive from the protocol seed alone, so every policy in a
comparison faces the same initial conditions. Aggregates are mean +/- the
population standard deviation across seed-level values and are always pure
functions of the stored per-rollout records (re-aggregation reproduces them
bit-exactly).
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .data import TrajectorySet, filter_successful, is_success, load_trajectories
from .encoder import EncoderCheckpoint
from .env import SpritePourEnv
from .exceptions import ValidationError
from .policies import bc_train, encode_trajectories, iql_train
from .policies.common import PolicyArtifact, frame_representation
from .seeding import derive_seed, rollout_seed
from .tensorio import canonical_json


def versions_stamp() -> dict:
    import torch
    return {"slotscene": __version__, "numpy": np.__version__, "torch": torch.__version__}


@dataclass
class RandomPolicy:
    """Uniform actions in [-1, 1]^7; the comparison floor for any policy."""

    horizon: int = 10
    replan_every: int = 10
    needs_observation: bool = False
    _rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def reset_rollout(self, seed: int) -> None:
        self._rng = np.random.default_rng(derive_seed(seed, 777))

    def check_encoder(self, encoder) -> None:  # no encoder involved
        return None

    def predict_chunk(self, policy_input) -> np.ndarray:
        return self._rng.uniform(-1.0, 1.0, size=(self.horizon, 7)).astype(np.float32)


def rollout(policy, env: SpritePourEnv, encoder: EncoderCheckpoint | None,
            cfg: ExperimentConfig, seed: int) -> tuple[float, bool, list]:
    """Run one seeded episode under the policy; returns (reward, success, trace)."""
    policy.check_encoder(encoder)
    if hasattr(policy, "reset_rollout"):
        policy.reset_rollout(seed)
    needs_obs = getattr(policy, "needs_observation", True)
    env.reset(seed)
    trace = []
    done = False
    step = 0
    while not done:
        if needs_obs:
            pixels = env.render()
            rep = frame_representation(pixels, f"rollout{seed}_t{step:03d}", encoder, cfg)
            policy_input = np.concatenate([rep, env.joints()])
        else:
            policy_input = None
        chunk = policy.predict_chunk(policy_input)
        for row in chunk[: policy.replan_every]:
            action = np.zeros(7, dtype=np.float32)
            action[: row.shape[-1]] = row
            joints, done = env.step(action)
            trace.append({"t": step, "action": action.tolist(),
                          "joints": joints.tolist()})
            step += 1
            if done:
                break
    reward = env.reward()
    return reward, is_success(reward), trace


def evaluate(policy, env_cfg, encoder: EncoderCheckpoint | None,
             cfg: ExperimentConfig, n_rollouts: int, seed: int) -> dict:
    """n seeded rollouts -> success rate, mean reward, per-rollout records."""
    if n_rollouts < 1:
        raise ValidationError(f"n_rollouts must be >= 1, got {n_rollouts}")
    env = SpritePourEnv(env_cfg)
    records = []
    for i in range(n_rollouts):
        rseed = rollout_seed(seed, i)
        reward, success, trace = rollout(policy, env, encoder, cfg, rseed)
        records.append({"index": i, "seed": rseed, "reward": reward,
                        "success": success, "steps": len(trace)})
    return seed_metrics_from_records(records)


def seed_metrics_from_records(records: list[dict]) -> dict:
    rewards = [r["reward"] for r in records]
    successes = [bool(r["success"]) for r in records]
    return {
        "n_rollouts": len(records),
        "success_rate": float(np.mean(successes)),
        "mean_reward": float(np.mean(rewards)),
        "records": records,
    }


def format_mean_std(mean: float, std: float) -> str:
    return f"{mean:.2f} ± {std:.2f}"


def aggregate_seed_values(values: list[float]) -> dict:
    """Mean and population std across seed-level values, plus 'm +/- s' text."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std())  # ddof=0: variability across the trained agents
    return {"mean": mean, "std": std, "formatted": format_mean_std(mean, std)}


@dataclass
class EvalReport:
    label: str
    stamp: dict
    seeds: list[dict]
    failures: list[dict] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        ok = [s for s in self.seeds if "error" not in s]
        if not ok:
            return {"success": None, "reward": None}
        return {
            "success": aggregate_seed_values([s["success_rate"] for s in ok]),
            "reward": aggregate_seed_values([s["mean_reward"] for s in ok]),
        }

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "stamp": self.stamp,
            "aggregate": self.aggregate,
            "seeds": self.seeds,
            "failures": self.failures,
        }

    def save(self, out_dir: str | Path, name: str = "report") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / f"{name}.json"
        json_path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n")
        with open(out / f"{name}.csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["train_seed", "rollout_index", "rollout_seed",
                             "reward", "success", "steps"])
            for seed_entry in self.seeds:
                if "error" in seed_entry:
                    continue
                for r in seed_entry["records"]:
                    writer.writerow([seed_entry["train_seed"], r["index"], r["seed"],
                                     repr(r["reward"]), int(r["success"]), r["steps"]])
        return json_path

    @classmethod
    def from_file(cls, path: str | Path) -> "EvalReport":
        data = json.loads(Path(path).read_text())
        return cls(label=data["label"], stamp=data["stamp"], seeds=data["seeds"],
                   failures=data.get("failures", []))

    def reaggregate(self) -> "EvalReport":
        """Rebuild seed-level metrics purely from stored per-rollout records."""
        seeds = []
        for entry in self.seeds:
            if "error" in entry:
                seeds.append(dict(entry))
                continue
            fresh = seed_metrics_from_records(entry["records"])
            fresh["train_seed"] = entry["train_seed"]
            seeds.append(fresh)
        return EvalReport(label=self.label, stamp=self.stamp, seeds=seeds,
                          failures=list(self.failures))


def _train_agent(dataset: TrajectorySet, encoder: EncoderCheckpoint,
                 cfg: ExperimentConfig, agent_seed: int, encoded) -> PolicyArtifact:
    if cfg.eval.algo == "bc":
        agent_cfg = dataclasses.replace(cfg, bc=dataclasses.replace(cfg.bc, seed=agent_seed))
        return bc_train(dataset, encoder, agent_cfg, encoded=encoded)
    agent_cfg = dataclasses.replace(cfg, iql=dataclasses.replace(cfg.iql, seed=agent_seed))
    return iql_train(dataset, encoder, agent_cfg, encoded=encoded)


def run_protocol(cfg: ExperimentConfig, dataset: TrajectorySet | None = None,
                 encoder: EncoderCheckpoint | None = None,
                 label: str = "protocol", out_dir: str | Path | None = None) -> EvalReport:
    """Train n_agents policies (seeds 0..n-1) and evaluate each on the same
    derived rollout seed set; aggregate mean +/- std across the seed-level
    values. Agent training failures are annotated, not fatal."""
    cfg.validate()
    if dataset is None:
        if not cfg.data.root:
            raise ValidationError("run_protocol needs a dataset (config data.root)")
        dataset = load_trajectories(cfg.data.root)
    if encoder is None:
        encoder = load_or_create_encoder(cfg, dataset)

    if cfg.eval.algo == "bc":
        train_set = filter_successful(dataset)
        if len(train_set) == 0:
            raise ValidationError("protocol dataset has no successful trajectories")
    else:
        train_set = dataset
    encoded = encode_trajectories(train_set, encoder, cfg)

    seeds = []
    failures = []
    for agent_seed in range(cfg.eval.n_agents):
        try:
            artifact = _train_agent(train_set, encoder, cfg, agent_seed, encoded)
            metrics = evaluate(artifact, cfg.env, encoder, cfg,
                               cfg.eval.n_rollouts, cfg.eval.seed)
            metrics["train_seed"] = agent_seed
            seeds.append(metrics)
        except Exception as err:  # annotate and continue with remaining seeds
            entry = {"train_seed": agent_seed, "error": f"{type(err).__name__}: {err}"}
            seeds.append(entry)
            failures.append(entry)
    stamp = {
        "config_fingerprint": cfg.fingerprint(),
        "protocol_seed": cfg.eval.seed,
        "n_agents": cfg.eval.n_agents,
        "n_rollouts": cfg.eval.n_rollouts,
        "algo": cfg.eval.algo,
        "encoder_fingerprint": encoder.fingerprint,
        "versions": versions_stamp(),
    }
    report = EvalReport(label=label, stamp=stamp, seeds=seeds, failures=failures)
    if out_dir is not None:
        report.save(out_dir, name=label)
    return report


def load_or_create_encoder(cfg: ExperimentConfig, dataset=None) -> EncoderCheckpoint:
    """Load the configured checkpoint, or build a fresh seeded encoder whose
    feature dim matches the backbone config."""
    if cfg.encoder.checkpoint:
        return EncoderCheckpoint.load(cfg.encoder.checkpoint)
    return EncoderCheckpoint.create(cfg.encoder, cfg.backbone.feature_dim)


def random_baseline(cfg: ExperimentConfig, n_rollouts: int, seed: int) -> dict:
    """Evaluate the uniform-random policy on the protocol's seed set."""
    policy = RandomPolicy(horizon=cfg.bc.horizon, replan_every=cfg.bc.replan_every)
    return evaluate(policy, cfg.env, None, cfg, n_rollouts, seed)
