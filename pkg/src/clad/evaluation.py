"""Measurement protocol: FAR/FRR/F1/EER, the fixed-threshold rule, DET
curves, attack sweeps, the combined-attack matrix, and the leave-one-out
unknown-manipulation study.

Classification rule, fixed so tests are exact: a score strictly greater
than the threshold is accepted as real; equality rejects (fake). The
decision threshold is derived once, from unmanipulated evaluation scores
at the FAR/FRR crossing, and reused for every attack cell. The reported
clean EER is the false-acceptance rate achieved at that operating point,
so the identity cell's FAR equals it by construction; the interpolated
crossing value is kept alongside (they differ by at most one empirical
step).
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .audio import fix_length
from .contrastive import TrainingConfig
from .dataset import LabeledSample
from .downstream import (
    Classifier,
    ScoreRecord,
    VARIANTS,
    score_array,
    train_variant,
)
from .encoder import TinyEncoderConfig
from .manipulate import (
    AugmentationPolicy,
    ManipulationSpec,
    NoiseBank,
    compose,
    family_representatives,
)


@dataclass(frozen=True)
class ScoreSet:
    """The two score populations behind every FAR/FRR computation."""

    real_scores: np.ndarray
    fake_scores: np.ndarray

    def __post_init__(self):
        real = np.asarray(self.real_scores, dtype=np.float64)
        fake = np.asarray(self.fake_scores, dtype=np.float64)
        if real.size == 0 or fake.size == 0:
            raise ValueError("both score populations must be non-empty")
        object.__setattr__(self, "real_scores", real)
        object.__setattr__(self, "fake_scores", fake)


@dataclass(frozen=True)
class Threshold:
    """Decision threshold, derived exclusively from unmanipulated scores."""

    value: float
    source: str = "eer_on_clean"


def _threshold_value(t: Union[Threshold, float]) -> float:
    return t.value if isinstance(t, Threshold) else float(t)


def far(fake_scores: Sequence[float], t: Union[Threshold, float]) -> float:
    """Fraction of fake scores strictly greater than the threshold."""
    fake_scores = np.asarray(fake_scores, dtype=np.float64)
    if fake_scores.size == 0:
        raise ValueError("far requires a non-empty fake-score list")
    return float(np.mean(fake_scores > _threshold_value(t)))


def frr(real_scores: Sequence[float], t: Union[Threshold, float]) -> float:
    """Fraction of real scores at or below the threshold (ties reject)."""
    real_scores = np.asarray(real_scores, dtype=np.float64)
    if real_scores.size == 0:
        raise ValueError("frr requires a non-empty real-score list")
    return float(np.mean(real_scores <= _threshold_value(t)))


def _candidate_thresholds(scores: ScoreSet) -> np.ndarray:
    pooled = np.unique(np.concatenate([scores.real_scores, scores.fake_scores]))
    mids = (pooled[:-1] + pooled[1:]) / 2.0 if pooled.size > 1 else np.empty(0)
    # Finite sentinels below/above every score: (FAR, FRR) = (1, 0) and (0, 1).
    return np.concatenate([[pooled[0] - 1.0], mids, [pooled[-1] + 1.0]])


def _curves(scores: ScoreSet, thresholds: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    reals = np.sort(scores.real_scores)
    fakes = np.sort(scores.fake_scores)
    fars = (fakes.size - np.searchsorted(fakes, thresholds, side="right")) / fakes.size
    frrs = np.searchsorted(reals, thresholds, side="right") / reals.size
    return fars, frrs


def eer(scores: ScoreSet) -> Tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps candidate thresholds at midpoints between consecutive distinct
    pooled scores (plus sentinels); at the sign change of FAR - FRR the
    bracketing (FAR, FRR) pairs are linearly interpolated.
    """
    cands = _candidate_thresholds(scores)
    fars, frrs = _curves(scores, cands)
    diff = fars - frrs
    cross = int(np.argmax(diff <= 0.0))  # first index where FAR <= FRR; >= 1
    if diff[cross] == 0.0:
        return float(fars[cross]), float(cands[cross])
    d1, d2 = diff[cross - 1], diff[cross]
    alpha = d1 / (d1 - d2)
    value = fars[cross - 1] + alpha * (fars[cross] - fars[cross - 1])
    threshold = cands[cross - 1] + alpha * (cands[cross] - cands[cross - 1])
    return float(value), float(threshold)


def f1(scores: ScoreSet, t: Union[Threshold, float]) -> float:
    """F1 with the real class positive: TP = accepted reals."""
    tv = _threshold_value(t)
    tp = int(np.sum(scores.real_scores > tv))
    fp = int(np.sum(scores.fake_scores > tv))
    fn = scores.real_scores.size - tp
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def det_points(scores: ScoreSet) -> List[Tuple[float, float]]:
    """(FAR, FRR) at every candidate threshold, ordered by threshold."""
    cands = _candidate_thresholds(scores)
    fars, frrs = _curves(scores, cands)
    return list(zip(fars.tolist(), frrs.tolist()))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class CellResult:
    manipulation: str
    far: float
    frr: float
    f1: float
    n_real: int
    n_fake: int


@dataclass
class EvalReport:
    """One model's robustness report: operating point plus per-attack cells."""

    threshold: float
    eer: float  # operating-point EER == FAR of the identity cell
    eer_interpolated: float
    frr_clean: float
    n_real: int
    n_fake: int
    cells: List[CellResult] = field(default_factory=list)
    det_points: List[Tuple[float, float]] = field(default_factory=list)
    matrix_labels: Optional[List[str]] = None  # set for combined-attack matrices
    score_records: List[ScoreRecord] = field(default_factory=list)

    def cell(self, manipulation: str) -> CellResult:
        for c in self.cells:
            if c.manipulation == manipulation:
                return c
        raise KeyError(f"no cell tagged {manipulation!r}")

    # -- serialization -------------------------------------------------
    def to_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        head = {
            "record": "header",
            "threshold": self.threshold,
            "eer": self.eer,
            "eer_interpolated": self.eer_interpolated,
            "frr_clean": self.frr_clean,
            "n_real": self.n_real,
            "n_fake": self.n_fake,
        }
        if self.matrix_labels is not None:
            head["matrix_labels"] = self.matrix_labels
        with open(path, "w") as fh:
            fh.write(json.dumps(head, sort_keys=True) + "\n")
            for c in self.cells:
                fh.write(
                    json.dumps(
                        {
                            "record": "cell",
                            "manipulation": c.manipulation,
                            "far": c.far,
                            "frr": c.frr,
                            "f1": c.f1,
                            "n_real": c.n_real,
                            "n_fake": c.n_fake,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )

    @classmethod
    def from_jsonl(cls, path) -> "EvalReport":
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
        head = lines[0]
        report = cls(
            threshold=head["threshold"],
            eer=head["eer"],
            eer_interpolated=head["eer_interpolated"],
            frr_clean=head["frr_clean"],
            n_real=head["n_real"],
            n_fake=head["n_fake"],
            matrix_labels=head.get("matrix_labels"),
        )
        for d in lines[1:]:
            report.cells.append(
                CellResult(
                    manipulation=d["manipulation"],
                    far=d["far"],
                    frr=d["frr"],
                    f1=d["f1"],
                    n_real=d["n_real"],
                    n_fake=d["n_fake"],
                )
            )
        return report

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["manipulation", "far", "frr", "f1", "n_real", "n_fake"])
            for c in self.cells:
                writer.writerow(
                    [c.manipulation, repr(c.far), repr(c.frr), repr(c.f1), c.n_real, c.n_fake]
                )

    def det_to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["far", "frr"])
            for pt in self.det_points:
                writer.writerow([repr(pt[0]), repr(pt[1])])

    def matrix_to_csv(self, path) -> None:
        if self.matrix_labels is None:
            raise ValueError("report has no matrix structure")
        labels = self.matrix_labels
        k = len(labels)
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["first\\second"] + labels)
            for i in range(k):
                row = [labels[i]]
                for j in range(k):
                    row.append(repr(self.cells[i * k + j].far))
                writer.writerow(row)


# ---------------------------------------------------------------------------
# Attack sweeps
# ---------------------------------------------------------------------------


def _chain_seed(master_seed: int, tags: Sequence[str], sample_id: str) -> int:
    """Stable per-(chain, sample) seed so identical cells reproduce exactly."""
    digest = hashlib.blake2s(
        f"{master_seed}:{'|'.join(tags)}:{sample_id}".encode(), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little") % (2**63)


def _score_fixed(classifier: Classifier, waveforms, input_len: int, chunk: int = 64) -> np.ndarray:
    out = []
    for start in range(0, len(waveforms), chunk):
        batch = np.stack(
            [fix_length(w, input_len).samples for w in waveforms[start : start + chunk]]
        )
        out.append(score_array(classifier, batch))
    return np.concatenate(out)


def _chain_tag(chain: Sequence[ManipulationSpec]) -> str:
    return "|".join(s.tag() for s in chain)


def _evaluate_chains(
    classifier: Classifier,
    eval_set: Sequence[LabeledSample],
    chains: Sequence[Sequence[ManipulationSpec]],
    bank: Optional[NoiseBank],
    cfg: TrainingConfig,
    seed: int,
) -> EvalReport:
    """Shared engine: score clean data, fix the threshold, attack the fakes."""
    reals = [s for s in eval_set if s.label == 1]
    fakes = [s for s in eval_set if s.label == 0]
    if not reals or not fakes:
        raise ValueError("evaluation set must contain both classes")

    real_scores = _score_fixed(classifier, [s.waveform for s in reals], cfg.input_len)
    fake_scores = _score_fixed(classifier, [s.waveform for s in fakes], cfg.input_len)
    clean = ScoreSet(real_scores, fake_scores)
    eer_interp, thr = eer(clean)
    threshold = Threshold(thr)

    report = EvalReport(
        threshold=thr,
        eer=far(fake_scores, threshold),
        eer_interpolated=eer_interp,
        frr_clean=frr(real_scores, threshold),
        n_real=len(reals),
        n_fake=len(fakes),
        det_points=det_points(clean),
    )
    for s, p in zip(reals, real_scores):
        report.score_records.append(ScoreRecord(s.sample_id, 1, float(p), None))
    for s, p in zip(fakes, fake_scores):
        report.score_records.append(ScoreRecord(s.sample_id, 0, float(p), None))

    for chain in chains:
        tags = [spec.tag() for spec in chain]
        manipulated = [
            compose(chain, s.waveform, bank, seed=_chain_seed(seed, tags, s.sample_id))
            for s in fakes
        ]
        scores = _score_fixed(classifier, manipulated, cfg.input_len)
        tag = _chain_tag(chain)
        cell_set = ScoreSet(real_scores, scores)
        report.cells.append(
            CellResult(
                manipulation=tag,
                far=far(scores, threshold),
                frr=report.frr_clean,
                f1=f1(cell_set, threshold),
                n_real=len(reals),
                n_fake=len(fakes),
            )
        )
        for s, p in zip(fakes, scores):
            report.score_records.append(ScoreRecord(s.sample_id, 0, float(p), tag))
    return report


def attack_sweep(
    classifier: Classifier,
    eval_set: Sequence[LabeledSample],
    grid: Sequence[ManipulationSpec],
    bank: Optional[NoiseBank],
    cfg: TrainingConfig,
    seed: int = 0,
) -> EvalReport:
    """Single-manipulation sweep: only the fakes are manipulated.

    The threshold comes from the clean scores, so the identity cell's FAR
    equals the reported clean EER, and the real-score records stay
    byte-identical across every cell.
    """
    return _evaluate_chains(classifier, eval_set, [[spec] for spec in grid], bank, cfg, seed)


def combined_attack_matrix(
    classifier: Classifier,
    eval_set: Sequence[LabeledSample],
    specs: Sequence[ManipulationSpec],
    bank: Optional[NoiseBank],
    cfg: TrainingConfig,
    seed: int = 0,
) -> EvalReport:
    """|specs|^2 matrix; rows apply first, columns second.

    Diagonal cells carry the manipulation applied once, i.e. they
    reproduce the single-manipulation sweep exactly.
    """
    if not specs:
        raise ValueError("combined_attack_matrix requires a non-empty spec list")
    chains = []
    for i, first in enumerate(specs):
        for j, second in enumerate(specs):
            chains.append([first] if i == j else [first, second])
    report = _evaluate_chains(classifier, eval_set, chains, bank, cfg, seed)
    report.matrix_labels = [s.tag() for s in specs]
    return report


def leave_one_out_study(
    train_set: Sequence[LabeledSample],
    eval_set: Sequence[LabeledSample],
    cfg: TrainingConfig,
    encoder_cfg: TinyEncoderConfig,
    policy: AugmentationPolicy,
    bank: Optional[NoiseBank],
    families: Sequence[str],
    seed: int = 0,
) -> List[Tuple[str, EvalReport]]:
    """Unknown-manipulation study: per family, train the full method with
    that family excluded from augmentation, then evaluate under every
    family's representative attack (including the held-out one)."""
    if len(families) < 2:
        raise ValueError("leave-one-out needs at least two families")
    reps = family_representatives()
    grid = [ManipulationSpec.identity()] + [reps[f] for f in families]
    waveforms = [s.waveform for s in train_set]
    labels = [s.label for s in train_set]
    results = []
    for family in families:
        reduced = policy.without(family)
        outcome = train_variant(
            waveforms, labels, cfg, VARIANTS["clad"], reduced, bank, encoder_cfg, seed
        )
        report = attack_sweep(outcome.classifier, eval_set, grid, bank, cfg, seed=seed)
        results.append((family, report))
    return results
