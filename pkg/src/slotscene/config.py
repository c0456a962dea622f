"""Dataclass configuration tree, TOML/JSON loading, config fingerprints.

Every experiment is driven by an `ExperimentConfig`. Section and key names
match the CLI documentation in the README; unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .exceptions import ConfigError
from .tensorio import canonical_json


@dataclass
class BackboneConfig:
    kind: str = "synthetic"  # synthetic | cache
    seed: int = 0
    patch_size: int = 14
    feature_dim: int = 768
    cache_path: str = ""

    def validate(self):
        if self.kind not in ("synthetic", "cache"):
            raise ConfigError(f"backbone.kind must be 'synthetic' or 'cache', got {self.kind!r}")
        if self.kind == "cache" and not self.cache_path:
            raise ConfigError("backbone.kind='cache' requires backbone.cache_path")
        if self.patch_size < 1:
            raise ConfigError("backbone.patch_size must be >= 1")
        if self.feature_dim < 1:
            raise ConfigError("backbone.feature_dim must be >= 1")


@dataclass
class EncoderConfig:
    n_slots: int = 8
    d_what: int = 128
    n_iter: int = 3
    k_merged: int = 4
    mlp_hidden: int = 0          # 0 -> 2 * d_what
    decoder_hidden: int = 256
    decoder_layers: int = 3
    decoder_posenc_freqs: int = 4
    stochastic_init: bool = False
    seed: int = 0
    checkpoint: str = ""         # path to a trained checkpoint, if any

    def validate(self):
        if self.k_merged < 1 or self.k_merged > self.n_slots:
            raise ConfigError(
                f"encoder.k_merged must be in [1, n_slots={self.n_slots}], got {self.k_merged}"
            )
        if self.n_iter < 1:
            raise ConfigError("encoder.n_iter must be >= 1")
        if self.decoder_layers < 2:
            raise ConfigError("encoder.decoder_layers must be >= 2")

    @property
    def mlp_hidden_dim(self) -> int:
        return self.mlp_hidden if self.mlp_hidden > 0 else 2 * self.d_what


@dataclass
class EncoderTrainingConfig:
    epochs: int = 100
    lr: float = 4e-4
    seed: int = 0
    grad_clip: float = 1.0


@dataclass
class RepresentationConfig:
    softmax_scale: float = 5.0
    where_h: int = 10
    where_w: int = 10
    include_where: bool = True

    def validate(self):
        if self.softmax_scale <= 0:
            raise ConfigError("representation.softmax_scale must be > 0")
        if self.where_h < 1 or self.where_w < 1:
            raise ConfigError("representation.where_h/where_w must be >= 1")

    @property
    def d_where(self) -> int:
        return self.where_h * self.where_w


@dataclass
class BCConfig:
    epochs: int = 80
    lr: float = 1e-3
    horizon: int = 10
    replan_every: int = 10
    batch: int = 256
    hidden: tuple[int, ...] = (512, 512)
    normalize_inputs: bool = True
    seed: int = 0

    def validate(self):
        if self.horizon < 1:
            raise ConfigError("bc.horizon must be >= 1")
        if not (1 <= self.replan_every <= self.horizon):
            raise ConfigError(
                f"bc.replan_every must be in [1, horizon={self.horizon}], got {self.replan_every}"
            )


@dataclass
class IQLConfig:
    tau: float = 0.7
    beta: float = 3.0
    gamma: float = 0.99
    polyak: float = 0.005
    steps: int = 50_000
    batch: int = 256
    lr: float = 3e-4
    hidden: tuple[int, ...] = (256, 256)
    normalize_inputs: bool = True
    seed: int = 0

    def validate(self):
        if not (0.0 < self.tau < 1.0):
            raise ConfigError(f"iql.tau must be in (0,1), got {self.tau}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ConfigError(f"iql.gamma must be in [0,1], got {self.gamma}")
        if not (0.0 <= self.polyak <= 1.0):
            raise ConfigError(f"iql.polyak must be in [0,1], got {self.polyak}")


@dataclass
class EnvConfig:
    render_h: int = 336
    render_w: int = 504
    t_max: int = 64
    n_beads: int = 12
    v_max: float = 0.08        # cup translation per step
    w_max: float = 0.25        # tilt change per step
    tilt_spring: float = 0.10  # passive un-tilt per step
    tilt_max: float = 1.35
    pour_tilt: float = 1.2     # beads release at/above this tilt
    container_x_range: tuple[float, float] = (0.60, 0.80)
    container_half_w: float = 0.09
    container_top_y: float = 0.78
    cup_start_x_range: tuple[float, float] = (0.10, 0.55)
    cup_start_y_range: tuple[float, float] = (0.20, 0.50)
    fall_speed: float = 0.18

    def validate(self):
        if self.t_max < 2:
            raise ConfigError("env.t_max must be >= 2")
        if self.n_beads < 1:
            raise ConfigError("env.n_beads must be >= 1")
        if not (0.0 < self.pour_tilt <= self.tilt_max):
            raise ConfigError("env.pour_tilt must be in (0, tilt_max]")


@dataclass
class ExpertConfig:
    gain: float = 0.6
    align_tol: float = 0.015
    stop_tol: float = 0.06
    hover_y: float = 0.42
    # Piecewise-constant per-trajectory schedules: trajectory i falls in the
    # noise_counts segment covering i (a count of 0 means "all remaining").
    noise_levels: tuple[float, ...] = (0.0,)
    noise_counts: tuple[int, ...] = (0,)
    bias_levels: tuple[float, ...] = ()  # aligned with noise_levels; default 0

    def _segment(self, traj_index: int) -> int:
        remaining = traj_index
        for seg, count in enumerate(self.noise_counts):
            if count == 0 or remaining < count:
                return seg
            remaining -= count
        return len(self.noise_levels) - 1

    def noise_for(self, traj_index: int) -> float:
        return self.noise_levels[self._segment(traj_index)]

    def bias_for(self, traj_index: int) -> float:
        if not self.bias_levels:
            return 0.0
        return self.bias_levels[self._segment(traj_index)]


@dataclass
class EvalConfig:
    n_rollouts: int = 100
    n_agents: int = 5
    seed: int = 0
    algo: str = "bc"  # bc | iql

    def validate(self):
        if self.n_rollouts < 1:
            raise ConfigError("eval.n_rollouts must be >= 1")
        if self.n_agents < 1:
            raise ConfigError("eval.n_agents must be >= 1")
        if self.algo not in ("bc", "iql"):
            raise ConfigError(f"eval.algo must be 'bc' or 'iql', got {self.algo!r}")


@dataclass
class DataConfig:
    root: str = ""        # trajectory set directory
    clips_root: str = ""  # video clip set directory (defaults to root)
    out_dir: str = "runs"


@dataclass
class ExperimentConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    training: EncoderTrainingConfig = field(default_factory=EncoderTrainingConfig)
    representation: RepresentationConfig = field(default_factory=RepresentationConfig)
    bc: BCConfig = field(default_factory=BCConfig)
    iql: IQLConfig = field(default_factory=IQLConfig)
    env: EnvConfig = field(default_factory=EnvConfig)
    expert: ExpertConfig = field(default_factory=ExpertConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self):
        for section in (self.backbone, self.encoder, self.representation, self.bc,
                        self.iql, self.env, self.eval):
            section.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def fingerprint(self) -> str:
        return sha256_hex(canonical_json(_jsonable(self.to_dict())))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


_SECTIONS = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _build_section(cls, data: dict, section: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {section}.{key}")
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    sections = {}
    for name, value in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        cls = ExperimentConfig.__dataclass_fields__[name].default_factory  # type: ignore[union-attr]
        sections[name] = _build_section(cls, value, name)
    cfg = ExperimentConfig(**sections)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        data = json.loads(path.read_text())
    else:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    return config_from_dict(data)
