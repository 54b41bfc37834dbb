"""Downstream stage: a linear head on the encoder, cross-entropy
fine-tuning, and real-probability scoring. Also hosts the four ablation
variants (vanilla supervised / contrastive-only / length-only / full).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .audio import Waveform, fix_length
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import PretrainResult, TrainingConfig, length_loss, pretrain
from .encoder import TinyEncoder, TinyEncoderConfig, tiny_encoder_new
from .manipulate import AugmentationPolicy, NoiseBank, sample_view
from .nn import Adam, Linear

_PROB_EPS = 1e-7


@dataclass(frozen=True)
class VariantConfig:
    """Which ingredients a trained model uses (the ablation axes)."""

    use_contrastive_pretrain: bool
    use_length_loss: bool
    supervised_augmentation: bool

    @property
    def pretrain_length_weighted(self) -> bool:
        """Length loss participates in the pretraining objective."""
        return self.use_contrastive_pretrain and self.use_length_loss

    @property
    def downstream_length_weighted(self) -> bool:
        """Length loss is added to the supervised loss (no pretrain stage)."""
        return self.use_length_loss and not self.use_contrastive_pretrain


#: The four canonical model variants.
VARIANTS: Dict[str, VariantConfig] = {
    "vanilla": VariantConfig(False, False, True),
    "cl": VariantConfig(True, False, True),
    "ll": VariantConfig(False, True, True),
    "clad": VariantConfig(True, True, True),
}


@dataclass(frozen=True)
class ScoreRecord:
    """One scored sample: probability of being real plus provenance."""

    sample_id: str
    label: int
    score: float
    manipulation: Optional[str] = None  # tag of the applied chain, if any

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be a finite probability, got {self.score}")


class Classifier:
    """Encoder plus a single affine map to two logits (fake, real)."""

    def __init__(self, encoder: TinyEncoder, seed: int = 0):
        self.encoder = encoder
        rng = np.random.Generator(np.random.PCG64(seed))
        self.head = Linear(encoder.feature_dim, 2, rng, encoder._dtype)

    def features_and_logits(self, batch: np.ndarray, training: bool,
                            store_cache: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        feats = self.encoder.forward(batch, training=training,
                                     store_cache=store_cache, update_stats=training)
        logits = self.head.forward(feats, training, store_cache=store_cache)
        return feats, logits

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        """Backprop from logit gradients; returns d loss / d features."""
        dfeat = self.head.backward(dlogits.astype(self.head.params["weight"].dtype, copy=False))
        return dfeat

    def named_params(self) -> Dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_params().items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def named_state(self) -> Dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_state().items()}
        out.update({f"head.{k}": v for k, v in self.head.params.items()})
        return out

    def named_grads(self) -> Dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_grads().items()}
        out.update({f"head.{k}": v for k, v in self.head.grads.items()})
        return out

    def zero_grads(self) -> None:
        self.encoder.zero_grads()
        self.head.zero_grads()


def softmax_real_probability(logits: np.ndarray) -> np.ndarray:
    """Probability of the real class: second component of the 2-way softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e[:, 1] / e.sum(axis=1)


def downstream_loss(p: np.ndarray, labels: np.ndarray) -> float:
    """Binary cross-entropy on real-probabilities, clamped at 1e-7."""
    p = np.clip(np.asarray(p, dtype=np.float64), _PROB_EPS, 1.0 - _PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def downstream_loss_from_logits(
    logits: np.ndarray, labels: np.ndarray
) -> Tuple[float, np.ndarray]:
    """Cross-entropy through the 2-way softmax, with its logit gradient.

    Numerically the same objective as :func:`downstream_loss` evaluated at
    p = softmax(logits)[real], computed in the log domain so no clamping
    is needed. Gradient rows are [y - p, p - y] / N over (fake, real).
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    log_p_real = z[:, 1] - log_norm
    log_p_fake = z[:, 0] - log_norm
    loss = float(-np.mean(y * log_p_real + (1.0 - y) * log_p_fake))
    p_real = np.exp(log_p_real)
    grad = np.stack([y - p_real, p_real - y], axis=1) / n
    return loss, grad


def score_batch(classifier: Classifier, batch: Sequence[Waveform]) -> List[float]:
    """Inference-mode real-probabilities, order preserved."""
    if len(batch) == 0:
        return []
    for w in batch:
        if len(w) != classifier.encoder.input_len:
            raise ValueError(
                f"waveform length {len(w)} does not match encoder input_len "
                f"{classifier.encoder.input_len}; fix_length first"
            )
    stacked = np.stack([w.samples for w in batch])
    return [float(v) for v in score_array(classifier, stacked)]


def score_array(classifier: Classifier, batch: np.ndarray) -> np.ndarray:
    """Array-in/array-out scoring used by the evaluation loops."""
    _, logits = classifier.features_and_logits(batch, training=False)
    return softmax_real_probability(np.asarray(logits, dtype=np.float64))


@dataclass
class FinetuneResult:
    classifier: Classifier
    history: List[dict] = field(default_factory=list)


def finetune(
    classifier: Classifier,
    waveforms: Sequence[Waveform],
    labels: Sequence[int],
    cfg: TrainingConfig,
    variant: VariantConfig,
    seed: int,
    policy: Optional[AugmentationPolicy] = None,
    bank: Optional[NoiseBank] = None,
    log_path=None,
) -> FinetuneResult:
    """Train encoder + head jointly with cross-entropy, deterministic by seed.

    With ``variant.supervised_augmentation`` every sample passes through a
    fresh manipulation draw each epoch. The length-only variant adds the
    feature-norm objective (weighted by ``cfg.length_weight``) on top of
    the cross-entropy. ``cfg.freeze_encoder`` restricts updates to the head.
    """
    if len(waveforms) == 0 or len(waveforms) != len(labels):
        raise ValueError("fine-tuning needs a non-empty labeled dataset")
    if variant.supervised_augmentation and policy is None:
        raise ValueError("supervised augmentation requires an augmentation policy")
    labels = np.asarray(labels, dtype=np.float64)

    ss = np.random.SeedSequence([int(seed), 1])
    shuffle_ss, view_ss = ss.spawn(2)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    view_rng = np.random.Generator(np.random.PCG64(view_ss))

    params = (
        {f"head.{k}": v for k, v in classifier.head.params.items()}
        if cfg.freeze_encoder
        else classifier.named_params()
    )
    optimizer = Adam(params, cfg.downstream_lr, weight_decay=cfg.downstream_weight_decay)

    add_length = variant.downstream_length_weighted
    result = FinetuneResult(classifier=classifier)
    n = len(waveforms)
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        for epoch in range(cfg.downstream_epochs):
            order = shuffle_rng.permutation(n)
            epoch_loss = 0.0
            correct = 0
            for start in range(0, n, cfg.downstream_batch):
                idx = order[start : start + cfg.downstream_batch]
                batch = np.empty((len(idx), cfg.input_len))
                for row, i in enumerate(idx):
                    w = waveforms[int(i)]
                    if variant.supervised_augmentation:
                        for _ in range(policy.chain_depth):
                            w, _ = sample_view(policy, w, bank, view_rng)
                    batch[row] = fix_length(w, cfg.input_len).samples
                y = labels[idx]

                feats, logits = classifier.features_and_logits(
                    batch, training=True, store_cache=True
                )
                loss, dlogits = downstream_loss_from_logits(logits, y)
                dfeat = classifier.backward(dlogits)
                if add_length:
                    feats64 = np.asarray(feats, dtype=np.float64)
                    l_len, d_len = length_loss(feats64, y, cfg.real_weight, cfg.margin)
                    loss += cfg.length_weight * l_len
                    dfeat = dfeat + cfg.length_weight * d_len.astype(dfeat.dtype)
                classifier.encoder.zero_grads()
                classifier.encoder.backward(dfeat)

                grads = classifier.named_grads()
                optimizer.step({k: grads[k] for k in params})

                p = softmax_real_probability(np.asarray(logits, dtype=np.float64))
                correct += int(np.sum((p > 0.5) == (y > 0.5)))
                epoch_loss += loss * len(idx)
            record = {
                "epoch": epoch,
                "loss": epoch_loss / n,
                "accuracy": correct / n,
            }
            result.history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
    finally:
        if log_fh is not None:
            log_fh.close()
    return result


@dataclass
class TrainOutcome:
    classifier: Classifier
    finetune: FinetuneResult
    pretrain: Optional[PretrainResult] = None


def train_variant(
    waveforms: Sequence[Waveform],
    labels: Sequence[int],
    cfg: TrainingConfig,
    variant: VariantConfig,
    policy: AugmentationPolicy,
    bank: Optional[NoiseBank],
    encoder_cfg: TinyEncoderConfig,
    seed: int,
    pretrain_log=None,
    finetune_log=None,
    encoder_ckpt=None,
) -> TrainOutcome:
    """End-to-end training of one model variant.

    Variants with contrastive pretraining run the pretraining stage first
    (with the length objective included only for the full method) and then
    fine-tune; the others fine-tune a freshly initialized encoder,
    ignoring any checkpoint.
    """
    pre = None
    if variant.use_contrastive_pretrain:
        pre = pretrain(
            waveforms,
            labels,
            cfg,
            policy,
            bank,
            encoder_cfg,
            seed=seed,
            use_length_loss=variant.pretrain_length_weighted,
            log_path=pretrain_log,
            checkpoint_path=encoder_ckpt,
        )
        enc = pre.encoder
    else:
        fresh_seed = int(np.random.SeedSequence([int(seed), 3]).generate_state(1)[0] % 2**31)
        enc = tiny_encoder_new(encoder_cfg, seed=fresh_seed)
    head_seed = int(np.random.SeedSequence([int(seed), 4]).generate_state(1)[0] % 2**31)
    classifier = Classifier(enc, seed=head_seed)
    fin = finetune(
        classifier,
        waveforms,
        labels,
        cfg,
        variant,
        seed=seed,
        policy=policy if variant.supervised_augmentation else None,
        bank=bank,
        log_path=finetune_log,
    )
    return TrainOutcome(classifier=classifier, finetune=fin, pretrain=pre)


# ---------------------------------------------------------------------------
# Persistence: classifier checkpoints and score files
# ---------------------------------------------------------------------------


def save_classifier(classifier: Classifier, path, step: int = 0) -> None:
    save_checkpoint(
        path,
        classifier.named_state(),
        {"encoder": classifier.encoder.cfg.to_dict(), "head": {"classes": 2}},
        step,
    )


def load_classifier(path) -> Classifier:
    tensors, config, _ = load_checkpoint(path)
    enc = TinyEncoder(TinyEncoderConfig.from_dict(config["encoder"]), seed=0)
    clf = Classifier(enc, seed=0)
    state = clf.named_state()
    missing = set(state) - set(tensors)
    if missing:
        raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
    for key, arr in state.items():
        arr[...] = np.asarray(tensors[key], dtype=arr.dtype).reshape(arr.shape)
    return clf


def write_scores(records: Sequence[ScoreRecord], path) -> None:
    """Newline-delimited score records, the interchange format for evaluation."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(
                json.dumps(
                    {
                        "sample_id": r.sample_id,
                        "label": r.label,
                        "manipulation": r.manipulation,
                        "score": r.score,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_scores(path) -> List[ScoreRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            records.append(
                ScoreRecord(
                    sample_id=d["sample_id"],
                    label=int(d["label"]),
                    score=float(d["score"]),
                    manipulation=d.get("manipulation"),
                )
            )
    return records
