"""Ablation runners: merged slot count, and what-only vs what+where inputs.

Each arm runs the full training/evaluation protocol under a modified config.
Results land in one CSV (the machine-readable contract; floats are written
with full precision) plus best-effort grouped-bar plot images.
"""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path

from .config import ExperimentConfig
from .data import TrajectorySet
from .encoder import EncoderCheckpoint
from .evaluation import EvalReport, run_protocol
from .exceptions import ValidationError

SLOT_ARMS = (4, 6, 8)


def run_ablation(kind: str, cfg: ExperimentConfig,
                 dataset: TrajectorySet | None = None,
                 encoder: EncoderCheckpoint | None = None,
                 out_dir: str | Path = "runs/ablation") -> dict[str, EvalReport]:
    if kind == "slots":
        arms = {
            f"k{k}": dataclasses.replace(
                cfg, encoder=dataclasses.replace(cfg.encoder, k_merged=k))
            for k in SLOT_ARMS
        }
    elif kind == "where":
        arms = {
            "what_where": dataclasses.replace(
                cfg, representation=dataclasses.replace(cfg.representation, include_where=True)),
            "what_only": dataclasses.replace(
                cfg, representation=dataclasses.replace(cfg.representation, include_where=False)),
        }
    else:
        raise ValidationError(f"ablation kind must be 'slots' or 'where', got {kind!r}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}
    for arm_name, arm_cfg in arms.items():
        reports[arm_name] = run_protocol(
            arm_cfg, dataset=dataset, encoder=encoder,
            label=f"{kind}_{arm_name}", out_dir=out)
    write_ablation_csv(reports, out / f"ablation_{kind}.csv")
    try:
        plot_ablation(reports, kind, out)
    except Exception as err:  # plots are best effort; the CSV is the contract
        (out / f"ablation_{kind}_plot_error.txt").write_text(str(err) + "\n")
    return reports


def write_ablation_csv(reports: dict[str, EvalReport], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["arm", "success_mean", "success_std", "reward_mean", "reward_std"])
        for arm_name, report in reports.items():
            agg = report.aggregate
            if agg["success"] is None:
                writer.writerow([arm_name, "", "", "", ""])
                continue
            writer.writerow([
                arm_name,
                repr(agg["success"]["mean"]), repr(agg["success"]["std"]),
                repr(agg["reward"]["mean"]), repr(agg["reward"]["std"]),
            ])


def read_ablation_csv(path: str | Path) -> dict[str, dict]:
    rows = {}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            rows[row["arm"]] = {
                "success_mean": float(row["success_mean"]),
                "success_std": float(row["success_std"]),
                "reward_mean": float(row["reward_mean"]),
                "reward_std": float(row["reward_std"]),
            }
    return rows


def plot_ablation(reports: dict[str, EvalReport], kind: str, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    arms = list(reports)
    for metric, ylabel in (("success", "success rate"), ("reward", "mean reward (%)")):
        means = [reports[a].aggregate[metric]["mean"] for a in arms]
        stds = [reports[a].aggregate[metric]["std"] for a in arms]
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.bar(range(len(arms)), means, yerr=stds, capsize=4,
               color="#4878a8", edgecolor="black", linewidth=0.6)
        ax.set_xticks(range(len(arms)))
        ax.set_xticklabels(arms)
        ax.set_ylabel(ylabel)
        ax.set_title(f"{kind} ablation")
        fig.tight_layout()
        fig.savefig(out / f"ablation_{kind}_{metric}.png", dpi=120)
        plt.close(fig)
