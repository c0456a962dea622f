"""Command-line interface.

Subcommands: data generate|validate|stats, encoder train|inspect,
policy train-bc|train-iql, eval run|protocol|ablate, report emit.
Every run accepts --config FILE (TOML or JSON) plus --seed, and writes a
reproducibility stamp (config hash, seed, versions). Exit codes: 0 success,
1 validation/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .exceptions import SlotSceneError, ValidationError


class UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class CliParser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage -> 1
        raise UsageError(message, self)


def build_parser() -> CliParser:
    parser = CliParser(prog="slotscene", description=__doc__)
    top = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="TOML or JSON experiment config")
        p.add_argument("--seed", type=int, help="override the relevant seed")

    data = top.add_parser("data", help="dataset generation and inspection")
    data_sub = data.add_subparsers(dest="subcommand", required=True)
    gen = data_sub.add_parser("generate", help="roll the scripted expert into a dataset")
    add_common(gen)
    gen.add_argument("--out", required=True, help="output dataset directory")
    gen.add_argument("--n-traj", type=int, help="number of trajectories")
    gen.add_argument("--preset", choices=["fixture103"],
                     help="use a frozen recipe (n-traj and seed included)")
    val = data_sub.add_parser("validate", help="check manifest, checksums, frames")
    val.add_argument("--path", required=True)
    stats = data_sub.add_parser("stats", help="print dataset counts")
    stats.add_argument("--path", required=True)

    enc = top.add_parser("encoder", help="encoder training and inspection")
    enc_sub = enc.add_subparsers(dest="subcommand", required=True)
    etrain = enc_sub.add_parser("train", help="self-supervised fine-tuning on clips")
    add_common(etrain)
    etrain.add_argument("--out", required=True, help="checkpoint output path")
    etrain.add_argument("--clips", help="clip directory (defaults to config data paths)")
    einspect = enc_sub.add_parser("inspect", help="print checkpoint header")
    einspect.add_argument("--checkpoint", required=True)

    pol = top.add_parser("policy", help="policy training")
    pol_sub = pol.add_subparsers(dest="subcommand", required=True)
    for name in ("train-bc", "train-iql"):
        p = pol_sub.add_parser(name, help=f"{name.split('-')[1].upper()} training")
        add_common(p)
        p.add_argument("--out", required=True, help="policy artifact output path")

    ev = top.add_parser("eval", help="rollout evaluation")
    ev_sub = ev.add_subparsers(dest="subcommand", required=True)
    run = ev_sub.add_parser("run", help="evaluate one policy artifact")
    add_common(run)
    run.add_argument("--policy", required=True)
    run.add_argument("--out", default="runs/eval")
    proto = ev_sub.add_parser("protocol", help="train n agents, evaluate each")
    add_common(proto)
    proto.add_argument("--out", default="runs/protocol")
    abl = ev_sub.add_parser("ablate", help="run an ablation study")
    abl.add_argument("kind", choices=["slots", "where"])
    add_common(abl)
    abl.add_argument("--out", default="runs/ablation")

    rep = top.add_parser("report", help="report regeneration")
    rep_sub = rep.add_subparsers(dest="subcommand", required=True)
    emit = rep_sub.add_parser("emit", help="re-aggregate a report from stored records")
    emit.add_argument("--source", required=True, help="existing report.json")
    emit.add_argument("--out", required=True, help="output directory")
    emit.add_argument("--name", default="report")
    return parser


def _load_cfg(args, default=None) -> ExperimentConfig:
    if getattr(args, "config", None):
        return load_config(args.config)
    if default is not None:
        return default
    return ExperimentConfig()


def write_stamp(out_dir: Path, cfg: ExperimentConfig, seed: int | None) -> None:
    from .evaluation import versions_stamp
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = {"config_fingerprint": cfg.fingerprint(), "seed": seed,
             "versions": versions_stamp()}
    (out_dir / "stamp.json").write_text(json.dumps(stamp, sort_keys=True, indent=1) + "\n")


def cmd_data_generate(args) -> int:
    from .data import generate_sprite_dataset
    from .presets import FIXTURE_N_TRAJ, FIXTURE_SEED, PRESETS
    if args.preset:
        cfg = PRESETS[args.preset]()
        n_traj = args.n_traj or FIXTURE_N_TRAJ
        seed = args.seed if args.seed is not None else FIXTURE_SEED
    else:
        cfg = _load_cfg(args)
        n_traj = args.n_traj or 8
        seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    tset, _ = generate_sprite_dataset(cfg.env, n_traj, cfg.expert, seed, out_dir=out)
    write_stamp(out, cfg, seed)
    print(f"wrote {tset.stats_line()} to {out}")
    return 0


def cmd_data_validate(args) -> int:
    from .data import load_trajectories
    tset = load_trajectories(args.path)
    print(f"ok: {tset.stats_line()}")
    return 0


def cmd_data_stats(args) -> int:
    from .data import load_trajectories
    print(load_trajectories(args.path).stats_line())
    return 0


def cmd_encoder_train(args) -> int:
    from .data import load_clips
    from .encoder_training import train_encoder
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, training=dataclasses.replace(cfg.training, seed=args.seed))
    clip_dir = args.clips or cfg.data.clips_root or (
        str(Path(cfg.data.root) / "frames") if cfg.data.root else "")
    if not clip_dir:
        raise ValidationError("no clip directory: pass --clips or set data.clips_root")
    clips = load_clips(clip_dir)
    ckpt = train_encoder(clips, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt.save(out)
    write_stamp(out.parent, cfg, cfg.training.seed)
    first, last = ckpt.loss_log[0], ckpt.loss_log[-1]
    print(f"trained {cfg.training.epochs} epochs on {len(clips)} clips; "
          f"loss {first:.6f} -> {last:.6f}; saved {out}")
    return 0


def cmd_encoder_inspect(args) -> int:
    from .tensorio import load_tensors
    meta, tensors = load_tensors(args.checkpoint)
    print(json.dumps({k: v for k, v in meta.items() if k != "loss_log"},
                     sort_keys=True, indent=1))
    print(f"{len(tensors)} tensors, "
          f"{sum(int(t.size) for t in tensors.values())} parameters")
    return 0


def cmd_policy_train(args, algo: str) -> int:
    from .data import load_trajectories
    from .evaluation import load_or_create_encoder
    from .policies import bc_train, iql_train
    cfg = _load_cfg(args)
    if args.seed is not None:
        if algo == "bc":
            cfg = dataclasses.replace(cfg, bc=dataclasses.replace(cfg.bc, seed=args.seed))
        else:
            cfg = dataclasses.replace(cfg, iql=dataclasses.replace(cfg.iql, seed=args.seed))
    if not cfg.data.root:
        raise ValidationError("config data.root must point at a trajectory set")
    dataset = load_trajectories(cfg.data.root)
    encoder = load_or_create_encoder(cfg)
    artifact = (bc_train if algo == "bc" else iql_train)(dataset, encoder, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    artifact.save(out)
    write_stamp(out.parent, cfg, artifact.meta["seed"])
    print(f"trained {algo} policy, saved {out}")
    return 0


def cmd_eval_run(args) -> int:
    from .evaluation import evaluate, load_or_create_encoder
    from .policies.common import PolicyArtifact
    cfg = _load_cfg(args)
    seed = args.seed if args.seed is not None else cfg.eval.seed
    artifact = PolicyArtifact.load(args.policy)
    encoder = load_or_create_encoder(cfg)
    metrics = evaluate(artifact, cfg.env, encoder, cfg, cfg.eval.n_rollouts, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_stamp(out, cfg, seed)
    (out / "eval.json").write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n")
    print(f"success rate {metrics['success_rate']:.2f}, "
          f"mean reward {metrics['mean_reward']:.2f} over {metrics['n_rollouts']} rollouts")
    return 0


def cmd_eval_protocol(args) -> int:
    from .evaluation import run_protocol
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, seed=args.seed))
    out = Path(args.out)
    report = run_protocol(cfg, out_dir=out, label="protocol")
    write_stamp(out, cfg, cfg.eval.seed)
    agg = report.aggregate
    if agg["success"] is None:
        print("protocol produced no successful training runs; see report failures")
        return 2
    print(f"success {agg['success']['formatted']}  reward {agg['reward']['formatted']}"
          f"  ({len(report.failures)} training failures)")
    return 0


def cmd_eval_ablate(args) -> int:
    from .ablation import run_ablation
    cfg = _load_cfg(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, seed=args.seed))
    out = Path(args.out)
    reports = run_ablation(args.kind, cfg, out_dir=out)
    write_stamp(out, cfg, cfg.eval.seed)
    for arm, report in reports.items():
        agg = report.aggregate
        line = "no successful runs" if agg["success"] is None else (
            f"success {agg['success']['formatted']}  reward {agg['reward']['formatted']}")
        print(f"{arm}: {line}")
    return 0


def cmd_report_emit(args) -> int:
    from .evaluation import EvalReport
    report = EvalReport.from_file(args.source).reaggregate()
    path = report.save(args.out, name=args.name)
    print(f"re-aggregated report written to {path}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        err.parser.print_usage(sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SystemExit as err:  # --help exits 0
        return int(err.code or 0)

    handlers = {
        ("data", "generate"): cmd_data_generate,
        ("data", "validate"): cmd_data_validate,
        ("data", "stats"): cmd_data_stats,
        ("encoder", "train"): cmd_encoder_train,
        ("encoder", "inspect"): cmd_encoder_inspect,
        ("policy", "train-bc"): lambda a: cmd_policy_train(a, "bc"),
        ("policy", "train-iql"): lambda a: cmd_policy_train(a, "iql"),
        ("eval", "run"): cmd_eval_run,
        ("eval", "protocol"): cmd_eval_protocol,
        ("eval", "ablate"): cmd_eval_ablate,
        ("report", "emit"): cmd_report_emit,
    }
    handler = handlers[(args.command, args.subcommand)]
    try:
        return handler(args)
    except (ValidationError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except SlotSceneError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # unexpected runtime failure
        print(f"runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
