"""Offline dataset formats: trajectory sets, video clip sets, generation.

On disk a trajectory set is one directory:

    <root>/manifest.json                 counts, version, per-file checksums
    <root>/trajectories/<id>.bin         tensor container: joints + actions
    <root>/frames/<id>/<ttt>.png         rendered frames, one per step

The layout is inspectable and language-neutral; the frames directory doubles
as a video-clip store for encoder pretraining (one clip per subdirectory).
Saving is canonical, so save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .config import EnvConfig, ExpertConfig
from .env import ScriptedExpert, SpritePourEnv
from .exceptions import ShapeError, ValidationError
from .seeding import derive_seed
from .tensorio import canonical_json, load_tensors, save_tensors

DATASET_VERSION = 1


def is_success(reward: float) -> bool:
    """The one place success is defined: strictly positive reward."""
    return reward > 0.0


# -- frame storage -----------------------------------------------------------


class ArrayFrames:
    """Frames held in memory as a (T, H, W, 3) uint8 array."""

    def __init__(self, traj_id: str, pixels: np.ndarray):
        pixels = np.asarray(pixels, dtype=np.uint8)
        if pixels.ndim != 4 or pixels.shape[-1] != 3:
            raise ShapeError(f"frames must be (T, H, W, 3) uint8, got {pixels.shape}")
        self.traj_id = traj_id
        self.pixels = pixels

    def __len__(self) -> int:
        return self.pixels.shape[0]

    def get(self, t: int) -> np.ndarray:
        return self.pixels[t]

    def frame_id(self, t: int) -> str:
        return f"{self.traj_id}_t{t:03d}"


class DirFrames:
    """Frames stored as PNG files in a per-trajectory directory."""

    def __init__(self, traj_id: str, directory: Path, count: int):
        self.traj_id = traj_id
        self.directory = Path(directory)
        self.count = count

    def __len__(self) -> int:
        return self.count

    def get(self, t: int) -> np.ndarray:
        path = self.directory / f"{t:03d}.png"
        if not path.exists():
            raise ValidationError(f"missing frame file: {path}")
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)

    def frame_id(self, t: int) -> str:
        return f"{self.traj_id}_t{t:03d}"


def write_png(pixels: np.ndarray, path: Path) -> None:
    """Canonical PNG writer (fixed encoder settings for byte-stable saves)."""
    Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="RGB").save(
        path, format="PNG", optimize=False, compress_level=6
    )


# -- core types --------------------------------------------------------------


@dataclass
class Trajectory:
    traj_id: str
    frames: ArrayFrames | DirFrames
    joints: np.ndarray   # (T, 7)
    actions: np.ndarray  # (T, 7)
    reward: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        t = len(self.frames)
        if self.joints.shape != (t, 7) or self.actions.shape != (t, 7):
            raise ValidationError(
                f"{self.traj_id}: frames/joints/actions lengths disagree "
                f"({t}, {self.joints.shape}, {self.actions.shape})"
            )
        if t < 2:
            raise ValidationError(f"{self.traj_id}: trajectories need >= 2 steps, got {t}")
        if not (0.0 <= self.reward <= 100.0):
            raise ValidationError(f"{self.traj_id}: reward {self.reward} outside [0,100]")

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def success(self) -> bool:
        return is_success(self.reward)


@dataclass
class TrajectorySet:
    trajectories: list[Trajectory]
    root: Path | None = None

    def __post_init__(self):
        ids = [t.traj_id for t in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValidationError("trajectory ids must be unique")

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    @property
    def n_success(self) -> int:
        return sum(t.success for t in self.trajectories)

    def stats_line(self) -> str:
        return f"{len(self)} trajectories, {self.n_success} successful"


@dataclass
class Clip:
    clip_id: str
    frames: ArrayFrames | DirFrames

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValidationError(f"clip {self.clip_id}: needs >= 2 frames")


@dataclass
class VideoClipSet:
    clips: list[Clip]

    def __len__(self) -> int:
        return len(self.clips)

    def __iter__(self):
        return iter(self.clips)

    @classmethod
    def from_trajectories(cls, tset: TrajectorySet, limit: int | None = None) -> "VideoClipSet":
        trajs = tset.trajectories[:limit] if limit else tset.trajectories
        return cls([Clip(t.traj_id, t.frames) for t in trajs])


def load_clips(path: str | Path, limit: int | None = None) -> VideoClipSet:
    """Load a directory of clips, one subdirectory of numbered PNGs each.

    This is the same contract as a trajectory set's frames/ directory, so
    pretraining can point straight at generated data or at any externally
    prepared frame dump.
    """
    root = Path(path)
    if not root.is_dir():
        raise ValidationError(f"clip directory not found: {root}")
    clips = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        count = len(list(sub.glob("*.png")))
        if count >= 2:
            clips.append(Clip(sub.name, DirFrames(sub.name, sub, count)))
        if limit and len(clips) >= limit:
            break
    if not clips:
        raise ValidationError(f"no clips with >= 2 frames under {root}")
    return VideoClipSet(clips)


# -- persistence -------------------------------------------------------------


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _save_trajectory_bin(traj: Trajectory, path: Path) -> None:
    save_tensors(
        path,
        meta={
            "id": traj.traj_id,
            "n_steps": traj.length,
            "reward": traj.reward,
            "meta": traj.meta,
        },
        tensors={"joints": traj.joints, "actions": traj.actions},
    )


def save_trajectories(tset: TrajectorySet, path: str | Path) -> Path:
    """Write the full directory layout; returns the root path."""
    root = Path(path)
    (root / "trajectories").mkdir(parents=True, exist_ok=True)
    (root / "frames").mkdir(exist_ok=True)
    entries = []
    for traj in tset:
        bin_path = root / "trajectories" / f"{traj.traj_id}.bin"
        _save_trajectory_bin(traj, bin_path)
        frame_dir = root / "frames" / traj.traj_id
        frame_dir.mkdir(parents=True, exist_ok=True)
        for t in range(traj.length):
            write_png(traj.frames.get(t), frame_dir / f"{t:03d}.png")
        entries.append({
            "id": traj.traj_id,
            "file": f"trajectories/{traj.traj_id}.bin",
            "n_steps": traj.length,
            "reward": traj.reward,
            "checksum": _sha256_file(bin_path),
        })
    manifest = {
        "version": DATASET_VERSION,
        "count": len(entries),
        "n_success": tset.n_success,
        "frame_store": "frames",
        "trajectories": entries,
    }
    (root / "manifest.json").write_text(canonical_json(manifest) + "\n")
    return root


def load_trajectories(path: str | Path) -> TrajectorySet:
    """Load and validate a trajectory set directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise ValidationError(f"dataset manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != DATASET_VERSION:
        raise ValidationError(
            f"unsupported dataset version {manifest.get('version')} (expected {DATASET_VERSION})"
        )
    entries = manifest["trajectories"]
    if manifest["count"] != len(entries):
        raise ValidationError(
            f"manifest count {manifest['count']} != {len(entries)} listed trajectories"
        )
    trajectories = []
    for entry in entries:
        bin_path = root / entry["file"]
        if not bin_path.exists():
            raise ValidationError(f"missing trajectory file: {bin_path}")
        if _sha256_file(bin_path) != entry["checksum"]:
            raise ValidationError(f"checksum mismatch for {bin_path}")
        meta, tensors = load_tensors(bin_path)
        frame_dir = root / manifest["frame_store"] / entry["id"]
        n_steps = meta["n_steps"]
        n_pngs = len(list(frame_dir.glob("*.png"))) if frame_dir.is_dir() else 0
        if n_pngs != n_steps:
            raise ValidationError(
                f"{entry['id']}: {n_pngs} frame files for {n_steps} steps under {frame_dir}"
            )
        trajectories.append(Trajectory(
            traj_id=meta["id"],
            frames=DirFrames(meta["id"], frame_dir, n_steps),
            joints=tensors["joints"],
            actions=tensors["actions"],
            reward=float(meta["reward"]),
            meta=meta.get("meta", {}),
        ))
    tset = TrajectorySet(trajectories, root=root)
    if tset.n_success != manifest["n_success"]:
        raise ValidationError(
            f"manifest n_success {manifest['n_success']} != recomputed {tset.n_success}"
        )
    return tset


def filter_successful(tset: TrajectorySet) -> TrajectorySet:
    """Keep exactly the trajectories with reward > 0, order preserved."""
    return TrajectorySet([t for t in tset if t.success], root=tset.root)


# -- generation --------------------------------------------------------------


def run_expert_episode(env: SpritePourEnv, expert: ScriptedExpert,
                       env_seed: int, collect_frames: bool = True):
    """Roll one scripted episode; returns (frames list, joints, actions, reward)."""
    env.reset(env_seed)
    frames, joints, actions = [], [], []
    done = False
    while not done:
        if collect_frames:
            frames.append(env.render())
        joints.append(env.joints())
        a = expert.action()
        actions.append(a)
        _, done = env.step(a)
    return frames, np.stack(joints), np.stack(actions), env.reward()


def generate_sprite_dataset(
    env_config: EnvConfig,
    n_traj: int,
    expert_config: ExpertConfig,
    seed: int,
    out_dir: str | Path | None = None,
) -> tuple[TrajectorySet, VideoClipSet]:
    """Roll the scripted expert n_traj times with the configured noise schedule.

    Deterministic per seed: trajectory i uses env seed derive_seed(seed, 2i)
    and noise seed derive_seed(seed, 2i+1). With out_dir set, frames stream
    straight to disk and the returned set references the saved files.
    """
    if n_traj < 1:
        raise ValidationError(f"n_traj must be >= 1, got {n_traj}")
    env_config.validate()
    env = SpritePourEnv(env_config)
    id_width = max(4, len(str(n_traj - 1)))

    root = None
    if out_dir is not None:
        root = Path(out_dir)
        (root / "trajectories").mkdir(parents=True, exist_ok=True)
        (root / "frames").mkdir(exist_ok=True)

    trajectories = []
    entries = []
    for i in range(n_traj):
        env_seed = derive_seed(seed, 2 * i)
        noise_seed = derive_seed(seed, 2 * i + 1)
        expert = ScriptedExpert(
            env=env,
            gain=expert_config.gain,
            align_tol=expert_config.align_tol,
            stop_tol=expert_config.stop_tol,
            hover_y=expert_config.hover_y,
            noise=expert_config.noise_for(i),
            target_bias=expert_config.bias_for(i),
            rng=np.random.default_rng(noise_seed),
        )
        traj_id = f"traj{i:0{id_width}d}"
        frames, joints, actions, reward = run_expert_episode(env, expert, env_seed)
        meta = {"env_seed": env_seed, "source": "expert",
                "noise": expert_config.noise_for(i),
                "target_bias": expert_config.bias_for(i)}
        if root is None:
            traj = Trajectory(traj_id, ArrayFrames(traj_id, np.stack(frames)),
                              joints, actions, reward, meta)
        else:
            frame_dir = root / "frames" / traj_id
            frame_dir.mkdir(parents=True, exist_ok=True)
            for t, px in enumerate(frames):
                write_png(px, frame_dir / f"{t:03d}.png")
            traj = Trajectory(traj_id, DirFrames(traj_id, frame_dir, len(frames)),
                              joints, actions, reward, meta)
            bin_path = root / "trajectories" / f"{traj_id}.bin"
            _save_trajectory_bin(traj, bin_path)
            entries.append({
                "id": traj_id,
                "file": f"trajectories/{traj_id}.bin",
                "n_steps": traj.length,
                "reward": traj.reward,
                "checksum": _sha256_file(bin_path),
            })
        trajectories.append(traj)

    tset = TrajectorySet(trajectories, root=root)
    if root is not None:
        manifest = {
            "version": DATASET_VERSION,
            "count": len(entries),
            "n_success": tset.n_success,
            "frame_store": "frames",
            "trajectories": entries,
        }
        (root / "manifest.json").write_text(canonical_json(manifest) + "\n")
    return tset, VideoClipSet.from_trajectories(tset)
