"""Experiment orchestration: config file schema, the pretrain -> finetune ->
evaluate pipeline over seeds, artifact persistence, and plot emission.

Every artifact written under the output directory is reproducible
byte-for-byte from the same config (plot images excepted; their backing
CSVs are included). Seeds run independently: a failure in one is recorded
in ``failures.json`` while the others proceed.
"""

from __future__ import annotations

import json
import os
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from .contrastive import TrainingConfig
from .dataset import LabeledSample, SynthConfig, generate_synthetic, parse_protocol
from .downstream import VARIANTS, save_classifier, train_variant, write_scores
from .encoder import TinyEncoderConfig
from .evaluation import (
    EvalReport,
    attack_sweep,
    combined_attack_matrix,
    leave_one_out_study,
)
from .manipulate import (
    AugmentationPolicy,
    FAMILIES,
    ManipulationSpec,
    NoiseBank,
    default_eval_grid,
    representative_specs,
    synthetic_noise_bank,
)

OUTPUT_ROOT_ENV = "CLAD_OUTPUT_ROOT"


@dataclass
class ExperimentConfig:
    """Everything one experiment needs, loadable from a single YAML file."""

    training: TrainingConfig = field(default_factory=TrainingConfig)
    encoder: TinyEncoderConfig = field(default_factory=TinyEncoderConfig)
    variant: str = "clad"
    synthetic: Optional[SynthConfig] = field(default_factory=SynthConfig)
    protocol_train_dir: Optional[str] = None
    protocol_eval_dir: Optional[str] = None
    enabled_families: Sequence[str] = FAMILIES
    augmentation_seed: int = 0
    chain_depth: int = 1
    noise_bank: str = "synthetic"  # or a directory of <noise_id>.wav files
    eval_grid: Optional[List[dict]] = None  # None -> the full default grid
    combined_matrix: bool = False
    leave_one_out: Sequence[str] = ()
    seeds: Sequence[int] = (0,)
    output_dir: str = "runs/experiment"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}"
            )
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if self.synthetic is None and not (
            self.protocol_train_dir and self.protocol_eval_dir
        ):
            raise ValueError("config needs either a synthetic dataset or protocol dirs")

    # -- config file round trip -----------------------------------------
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        dataset = d.pop("dataset", {})
        kwargs: dict = {}
        if "synthetic" in dataset:
            kwargs["synthetic"] = SynthConfig.from_dict(dataset["synthetic"])
        elif "protocol" in dataset:
            kwargs["synthetic"] = None
            kwargs["protocol_train_dir"] = dataset["protocol"]["train_dir"]
            kwargs["protocol_eval_dir"] = dataset["protocol"]["eval_dir"]
        if "training" in d:
            kwargs["training"] = TrainingConfig.from_dict(d.pop("training"))
        if "encoder" in d:
            kwargs["encoder"] = TinyEncoderConfig.from_dict(d.pop("encoder"))
        aug = d.pop("augmentation", {})
        if "enabled_families" in aug:
            kwargs["enabled_families"] = tuple(aug["enabled_families"])
        if "seed" in aug:
            kwargs["augmentation_seed"] = int(aug["seed"])
        if "chain_depth" in aug:
            kwargs["chain_depth"] = int(aug["chain_depth"])
        grid = d.pop("eval_grid", None)
        if grid not in (None, "default"):
            kwargs["eval_grid"] = [dict(cell) for cell in grid]
        kwargs.update(d)
        return cls(**kwargs)

    @classmethod
    def from_yaml(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(yaml.safe_load(fh) or {})

    def to_dict(self) -> dict:
        out = {
            "dataset": (
                {"synthetic": self.synthetic.to_dict()}
                if self.synthetic is not None
                else {
                    "protocol": {
                        "train_dir": self.protocol_train_dir,
                        "eval_dir": self.protocol_eval_dir,
                    }
                }
            ),
            "training": self.training.to_dict(),
            "encoder": self.encoder.to_dict(),
            "variant": self.variant,
            "augmentation": {
                "enabled_families": list(self.enabled_families),
                "seed": self.augmentation_seed,
                "chain_depth": self.chain_depth,
            },
            "noise_bank": self.noise_bank,
            "eval_grid": self.eval_grid if self.eval_grid is not None else "default",
            "combined_matrix": self.combined_matrix,
            "leave_one_out": list(self.leave_one_out),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }
        return out

    # -- resolution helpers ----------------------------------------------
    def resolve_output_dir(self) -> Path:
        path = Path(self.output_dir)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not path.is_absolute():
            path = Path(root) / path
        return path

    def load_dataset(self):
        if self.synthetic is not None:
            return generate_synthetic(self.synthetic)
        return (
            parse_protocol(self.protocol_train_dir),
            parse_protocol(self.protocol_eval_dir),
        )

    def load_noise_bank(self) -> NoiseBank:
        if self.noise_bank == "synthetic":
            return synthetic_noise_bank()
        return NoiseBank.from_directory(self.noise_bank)

    def resolve_eval_grid(self) -> List[ManipulationSpec]:
        if self.eval_grid is None:
            return default_eval_grid()
        return [ManipulationSpec.from_dict(cell) for cell in self.eval_grid]

    def make_policy(self, seed: int) -> AugmentationPolicy:
        derived = int(
            np.random.SeedSequence([int(self.augmentation_seed), int(seed)])
            .generate_state(1)[0]
            % 2**31
        )
        return AugmentationPolicy(
            enabled_families=self.enabled_families,
            seed=derived,
            chain_depth=self.chain_depth,
        )


def _plot_det(report: EvalReport, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fars = [p[0] for p in report.det_points]
    frrs = [p[1] for p in report.det_points]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.plot(fars, frrs)
    ax.plot([report.eer], [report.eer], "o", ms=4)
    ax.set_xlabel("false acceptance rate")
    ax.set_ylabel("false rejection rate")
    ax.set_title("DET (clean)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_score_hist(report: EvalReport, path: Path, csv_path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    clean = [r for r in report.score_records if r.manipulation is None]
    reals = [r.score for r in clean if r.label == 1]
    fakes = [r.score for r in clean if r.label == 0]
    edges = np.linspace(0.0, 1.0, 41)
    real_counts, _ = np.histogram(reals, bins=edges)
    fake_counts, _ = np.histogram(fakes, bins=edges)
    with open(csv_path, "w") as fh:
        fh.write("bin_left,bin_right,real_count,fake_count\n")
        for i in range(len(edges) - 1):
            fh.write(
                f"{edges[i]!r},{edges[i + 1]!r},{real_counts[i]},{fake_counts[i]}\n"
            )
    fig, ax = plt.subplots(figsize=(5, 3))
    centers = (edges[:-1] + edges[1:]) / 2
    width = edges[1] - edges[0]
    ax.bar(centers, fake_counts, width=width, alpha=0.6, label="fake")
    ax.bar(centers, real_counts, width=width, alpha=0.6, label="real")
    ax.axvline(report.threshold, ls="--", lw=1, color="k")
    ax.set_xlabel("score (probability of real)")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def run_seed(
    cfg: ExperimentConfig,
    seed: int,
    train_set: Sequence[LabeledSample],
    eval_set: Sequence[LabeledSample],
    bank: NoiseBank,
    seed_dir: Path,
) -> EvalReport:
    """Train one model for one seed and evaluate it; writes all artifacts."""
    seed_dir.mkdir(parents=True, exist_ok=True)
    policy = cfg.make_policy(seed)
    variant = VARIANTS[cfg.variant]

    waveforms = [s.waveform for s in train_set]
    labels = [s.label for s in train_set]
    outcome = train_variant(
        waveforms,
        labels,
        cfg.training,
        variant,
        policy,
        bank,
        cfg.encoder,
        seed=seed,
        pretrain_log=(seed_dir / "pretrain_log.jsonl") if variant.use_contrastive_pretrain else None,
        finetune_log=seed_dir / "finetune_log.jsonl",
        encoder_ckpt=(seed_dir / "encoder.ckpt") if variant.use_contrastive_pretrain else None,
    )
    save_classifier(outcome.classifier, seed_dir / "classifier.ckpt")

    report = attack_sweep(
        outcome.classifier, eval_set, cfg.resolve_eval_grid(), bank, cfg.training, seed=seed
    )
    report.to_jsonl(seed_dir / "report.jsonl")
    report.to_csv(seed_dir / "report.csv")
    report.det_to_csv(seed_dir / "det_clean.csv")
    write_scores(report.score_records, seed_dir / "scores.jsonl")
    plots = seed_dir / "plots"
    plots.mkdir(exist_ok=True)
    _plot_det(report, plots / "det_clean.png")
    _plot_score_hist(report, plots / "score_hist.png", plots / "score_hist.csv")

    if cfg.combined_matrix:
        matrix = combined_attack_matrix(
            outcome.classifier, eval_set, representative_specs(), bank, cfg.training, seed=seed
        )
        matrix.to_jsonl(seed_dir / "matrix.jsonl")
        matrix.matrix_to_csv(seed_dir / "matrix.csv")

    if cfg.leave_one_out:
        results = leave_one_out_study(
            train_set,
            eval_set,
            cfg.training,
            cfg.encoder,
            policy,
            bank,
            list(cfg.leave_one_out),
            seed=seed,
        )
        for family, loo_report in results:
            loo_report.to_jsonl(seed_dir / f"loo_{family}.jsonl")
            loo_report.to_csv(seed_dir / f"loo_{family}.csv")
    return report


def summarize(reports: Dict[int, EvalReport], out_dir: Path) -> dict:
    """Aggregate per-seed reports into summary.csv / summary.json."""
    seeds = sorted(reports)
    summary = {
        "seeds": seeds,
        "clean_eer_by_seed": {str(s): reports[s].eer for s in seeds},
        "clean_eer_mean": float(np.mean([reports[s].eer for s in seeds])),
        "cells": {},
    }
    tags = [c.manipulation for c in reports[seeds[0]].cells]
    for tag in tags:
        by_seed = {str(s): reports[s].cell(tag).far for s in seeds}
        summary["cells"][tag] = {
            "far_by_seed": by_seed,
            "mean_far": float(np.mean(list(by_seed.values()))),
        }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    with open(out_dir / "summary.csv", "w") as fh:
        fh.write("manipulation,mean_far," + ",".join(f"seed_{s}_far" for s in seeds) + "\n")
        for tag in tags:
            cell = summary["cells"][tag]
            row = [tag, repr(cell["mean_far"])]
            row += [repr(cell["far_by_seed"][str(s)]) for s in seeds]
            fh.write(",".join(row) + "\n")
    return summary


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Full pipeline over every seed; returns the summary dict."""
    out_dir = cfg.resolve_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)

    train_set, eval_set = cfg.load_dataset()
    bank = cfg.load_noise_bank()

    reports: Dict[int, EvalReport] = {}
    failures = {}
    for seed in cfg.seeds:
        try:
            reports[seed] = run_seed(
                cfg, seed, train_set, eval_set, bank, out_dir / f"seed_{seed}"
            )
        except Exception as exc:  # noqa: BLE001 - per-seed isolation is the contract
            failures[str(seed)] = {
                "error": type(exc).__name__,
                "message": str(exc),
                "traceback": traceback.format_exc(),
            }
    if failures:
        with open(out_dir / "failures.json", "w") as fh:
            json.dump(failures, fh, sort_keys=True, indent=2)
            fh.write("\n")
    if not reports:
        raise RuntimeError(f"every seed failed; see {out_dir / 'failures.json'}")
    return summarize(reports, out_dir)
