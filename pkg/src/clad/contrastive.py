"""Momentum-contrastive pretraining with the feature-length objective.

One pretraining step encodes two independently manipulated views of each
waveform, pulls the query features toward their key twins against a FIFO
queue of past keys (cosine-similarity softmax at temperature tau), and
simultaneously shrinks real-audio feature norms while pushing fake norms
past a margin. The combined objective is

    total = contrastive + length_weight * length

after which the query encoder takes one Adam step, the key encoder is
momentum-synced, and the batch keys are enqueued -- in that order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .audio import Waveform, fix_length
from .encoder import (
    EncoderPair,
    TinyEncoder,
    TinyEncoderConfig,
    clone_into_key,
    momentum_update,
    save_encoder,
    tiny_encoder_new,
)
from .manipulate import AugmentationPolicy, NoiseBank, sample_view
from .nn import Adam


@dataclass
class TrainingConfig:
    """Every knob of the two training stages.

    Defaults reproduce the full-scale recipe; desk-scale experiments
    override the epoch counts, queue size and input length.
    """

    temperature: float = 0.07
    momentum: float = 0.999
    queue_size: int = 6144
    length_weight: float = 2.0
    margin: float = 4.0
    real_weight: float = 9.0
    pretrain_lr: float = 0.0005
    pretrain_weight_decay: float = 0.0001
    pretrain_epochs: int = 150
    pretrain_batch: int = 24
    cosine_annealing: bool = True
    downstream_lr: float = 0.001
    downstream_weight_decay: float = 0.0001
    downstream_epochs: int = 10
    downstream_batch: int = 16
    input_len: int = 64600
    #: Sum the contrastive softmax denominator over queue entries only
    #: (the literal printed form) instead of positive + queue.
    queue_only_denominator: bool = False
    #: Freeze encoder weights during downstream training (head only).
    freeze_encoder: bool = False

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")
        if self.queue_size <= 0 or self.pretrain_batch <= 0 or self.downstream_batch <= 0:
            raise ValueError("queue and batch sizes must be positive")
        if self.length_weight < 0 or self.margin < 0 or self.real_weight <= 0:
            raise ValueError("length_weight/margin must be >= 0, real_weight > 0")
        if self.input_len <= 0:
            raise ValueError("input_len must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        return cls(**d)


@dataclass(frozen=True)
class LossBreakdown:
    """Per-step objective decomposition: total = contrastive + weight * length."""

    contrastive: float
    length: float
    total: float


@dataclass
class PretrainBatch:
    """One pretraining mini-batch: two manipulated views per sample."""

    labels: np.ndarray
    view_a: np.ndarray
    view_b: np.ndarray
    waveforms: Optional[Sequence[Waveform]] = None

    def __post_init__(self):
        if not (len(self.labels) == len(self.view_a) == len(self.view_b)):
            raise ValueError("labels and views must agree on the batch size")


class NegativeQueue:
    """Fixed-capacity FIFO of unit-norm key features.

    Warm-started with random unit vectors so the softmax denominator has a
    constant scale from the very first step.
    """

    def __init__(self, storage: np.ndarray, write_cursor: int = 0):
        storage = np.asarray(storage, dtype=np.float64)
        if storage.ndim != 2:
            raise ValueError("queue storage must be a K x D matrix")
        self.storage = storage
        self.write_cursor = int(write_cursor) % storage.shape[0]
        self.fill = storage.shape[0]

    @property
    def capacity(self) -> int:
        return self.storage.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.storage.shape[1]


def queue_init(capacity: int, feature_dim: int, seed: int) -> NegativeQueue:
    """Queue filled with K i.i.d. random unit vectors, deterministic by seed."""
    if capacity <= 0 or feature_dim <= 0:
        raise ValueError("queue capacity and feature_dim must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    g = rng.standard_normal((capacity, feature_dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return NegativeQueue(g)


def queue_push(queue: NegativeQueue, keys: np.ndarray) -> None:
    """Overwrite the oldest entries (FIFO) with a batch of unit-norm keys."""
    keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
    if keys.shape[0] > queue.capacity:
        raise ValueError(
            f"batch of {keys.shape[0]} keys exceeds queue capacity {queue.capacity}"
        )
    if keys.shape[1] != queue.feature_dim:
        raise ValueError(
            f"key dimension {keys.shape[1]} != queue feature_dim {queue.feature_dim}"
        )
    norms = np.linalg.norm(keys, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ValueError("queue keys must be unit-normalized (|norm - 1| <= 1e-5)")
    start = queue.write_cursor
    end = start + keys.shape[0]
    if end <= queue.capacity:
        queue.storage[start:end] = keys
    else:
        split = queue.capacity - start
        queue.storage[start:] = keys[:split]
        queue.storage[: end - queue.capacity] = keys[split:]
    queue.write_cursor = end % queue.capacity


def _normalize_rows(x: np.ndarray, what: str) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"zero-norm {what} row: cosine normalization undefined")
    return x / norms[:, None], norms


def contrastive_loss(
    q: np.ndarray,
    k_pos: np.ndarray,
    queue: NegativeQueue,
    temperature: float,
    include_positive: bool = True,
) -> Tuple[float, np.ndarray]:
    """Cosine-similarity softmax loss of queries against keys and the queue.

    Rows of ``q`` and ``k_pos`` are unit-normalized copies; the positive
    logit is q_i . k_i and the negatives are the queue entries, all scaled
    by 1/temperature. Keys and queue entries are constants for
    differentiation. Returns (mean loss, d loss / d q) with the gradient
    taken w.r.t. the *unnormalized* queries.

    ``include_positive=False`` restricts the softmax denominator to the
    queue entries only (the literal printed form, which can go negative).
    """
    q = np.asarray(q, dtype=np.float64)
    k_pos = np.asarray(k_pos, dtype=np.float64)
    if q.shape != k_pos.shape:
        raise ValueError(f"q and k_pos shapes differ: {q.shape} vs {k_pos.shape}")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if q.shape[1] != queue.feature_dim:
        raise ValueError("feature dimension does not match the queue")
    qh, q_norms = _normalize_rows(q, "query feature")
    kh, _ = _normalize_rows(k_pos, "key feature")
    negatives = queue.storage

    n = q.shape[0]
    pos = np.einsum("nd,nd->n", qh, kh) / temperature
    neg = (qh @ negatives.T) / temperature

    if include_positive:
        logits = np.concatenate([pos[:, None], neg], axis=1)
        peak = logits.max(axis=1, keepdims=True)
        lse = peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))
        losses = lse - pos
        p = np.exp(logits - lse[:, None])
        g_hat = ((p[:, 0] - 1.0)[:, None] * kh + p[:, 1:] @ negatives) / temperature
    else:
        peak = neg.max(axis=1, keepdims=True)
        lse = peak[:, 0] + np.log(np.exp(neg - peak).sum(axis=1))
        losses = lse - pos
        p = np.exp(neg - lse[:, None])
        g_hat = (-kh + p @ negatives) / temperature

    # Chain rule through row normalization: d qhat / d q = (I - qhat qhat^T)/|q|.
    radial = np.einsum("nd,nd->n", g_hat, qh)
    grad = (g_hat - radial[:, None] * qh) / q_norms[:, None] / n
    return float(losses.mean()), grad


def length_loss(
    q: np.ndarray,
    labels: np.ndarray,
    real_weight: float,
    margin: float,
) -> Tuple[float, np.ndarray]:
    """Feature-norm objective: shrink real norms, push fake norms past margin.

        mean_i [ y_i * w * |q_i| + (1 - y_i) * max(margin - |q_i|, 0) ]

    Uses the unnormalized feature length. Returns (loss, d loss / d q); at
    the hinge kink (|q| == margin) and the origin the zero subgradient is
    taken.
    """
    q = np.asarray(q, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] != q.shape[0]:
        raise ValueError("labels and features must agree on the batch size")
    if np.any((labels != 0.0) & (labels != 1.0)):
        raise ValueError("labels must be binary (1 real, 0 fake)")
    n = q.shape[0]
    norms = np.linalg.norm(q, axis=1)
    hinge = np.maximum(margin - norms, 0.0)
    loss = float(np.mean(labels * real_weight * norms + (1.0 - labels) * hinge))

    coef = labels * real_weight - (1.0 - labels) * (norms < margin)
    grad = np.zeros_like(q)
    nz = norms > 0
    grad[nz] = (coef[nz] / norms[nz] / n)[:, None] * q[nz]
    return loss, grad


def pretrain_loss(contrastive: float, length: float, length_weight: float) -> LossBreakdown:
    """Weighted sum of the two pretraining terms."""
    if length_weight < 0:
        raise ValueError("length_weight must be nonnegative")
    return LossBreakdown(
        contrastive=float(contrastive),
        length=float(length),
        total=float(contrastive) + length_weight * float(length),
    )


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Cosine annealing from base_lr (epoch 0) to 0 (final epoch)."""
    if total_epochs <= 1:
        return base_lr
    return base_lr * (1.0 + math.cos(math.pi * epoch / (total_epochs - 1))) / 2.0


def pretrain_step(
    pair: EncoderPair,
    queue: NegativeQueue,
    batch: PretrainBatch,
    cfg: TrainingConfig,
    optimizer: Adam,
    lr: Optional[float] = None,
    use_length_loss: bool = True,
) -> LossBreakdown:
    """One pretraining iteration.

    Fixed order: gradient step on the query encoder, momentum sync of the
    key encoder, then enqueue the batch keys. No gradient reaches the key
    side; the key forward runs with batch statistics but never updates its
    own running buffers (those are momentum-synced instead).
    """
    q_feat = pair.query.forward(
        batch.view_a, training=True, store_cache=True, update_stats=True
    )
    k_feat = pair.key.forward(
        batch.view_b, training=True, store_cache=False, update_stats=False
    )

    cl_loss, cl_grad = contrastive_loss(
        q_feat,
        k_feat,
        queue,
        cfg.temperature,
        include_positive=not cfg.queue_only_denominator,
    )
    if use_length_loss and cfg.length_weight > 0:
        len_loss, len_grad = length_loss(q_feat, batch.labels, cfg.real_weight, cfg.margin)
        weight = cfg.length_weight
        grad = cl_grad + weight * len_grad
    else:
        len_loss, weight = 0.0, 0.0
        grad = cl_grad
    breakdown = pretrain_loss(cl_loss, len_loss, weight)

    pair.query.zero_grads()
    pair.query.backward(grad)
    optimizer.step(pair.query.named_grads(), lr=lr)
    momentum_update(pair)

    kh, _ = _normalize_rows(np.asarray(k_feat, dtype=np.float64), "key feature")
    queue_push(queue, kh)
    return breakdown


@dataclass
class PretrainResult:
    encoder: TinyEncoder
    loss_history: List[LossBreakdown] = field(default_factory=list)
    steps: int = 0


def pretrain(
    waveforms: Sequence[Waveform],
    labels: Sequence[int],
    cfg: TrainingConfig,
    policy: AugmentationPolicy,
    bank: Optional[NoiseBank],
    encoder_cfg: TinyEncoderConfig,
    seed: int,
    use_length_loss: bool = True,
    log_path=None,
    checkpoint_path=None,
) -> PretrainResult:
    """Run the full pretraining stage; deterministic given the seed.

    Epoch learning rates follow cosine annealing from ``pretrain_lr`` down
    to zero when ``cfg.cosine_annealing`` is set. Writes one JSON record
    per step to ``log_path`` and a checkpoint of the query encoder to
    ``checkpoint_path`` when given.
    """
    if len(waveforms) == 0 or len(waveforms) != len(labels):
        raise ValueError("pretraining needs a non-empty labeled dataset")
    labels = np.asarray(labels, dtype=np.float64)

    ss = np.random.SeedSequence([int(seed), int(policy.seed)])
    shuffle_ss, init_ss, queue_ss, view_a_ss, view_b_ss = ss.spawn(5)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_ss))
    rng_a = np.random.Generator(np.random.PCG64(view_a_ss))
    rng_b = np.random.Generator(np.random.PCG64(view_b_ss))

    query = tiny_encoder_new(encoder_cfg, seed=int(init_ss.generate_state(1)[0] % (2**31)))
    pair = clone_into_key(query, momentum=cfg.momentum)
    queue = queue_init(
        cfg.queue_size, encoder_cfg.feature_dim, seed=int(queue_ss.generate_state(1)[0] % (2**31))
    )
    optimizer = Adam(
        query.named_params(), cfg.pretrain_lr, weight_decay=cfg.pretrain_weight_decay
    )

    result = PretrainResult(encoder=query)
    log_fh = open(log_path, "w") if log_path is not None else None
    try:
        n = len(waveforms)
        for epoch in range(cfg.pretrain_epochs):
            lr = (
                cosine_lr(cfg.pretrain_lr, epoch, cfg.pretrain_epochs)
                if cfg.cosine_annealing
                else cfg.pretrain_lr
            )
            order = shuffle_rng.permutation(n)
            for start in range(0, n, cfg.pretrain_batch):
                idx = order[start : start + cfg.pretrain_batch]
                batch = PretrainBatch(
                    labels=labels[idx],
                    view_a=_augmented_views(waveforms, idx, policy, bank, rng_a, cfg.input_len),
                    view_b=_augmented_views(waveforms, idx, policy, bank, rng_b, cfg.input_len),
                )
                breakdown = pretrain_step(
                    pair, queue, batch, cfg, optimizer, lr=lr, use_length_loss=use_length_loss
                )
                result.loss_history.append(breakdown)
                result.steps += 1
                if log_fh is not None:
                    log_fh.write(
                        json.dumps(
                            {
                                "epoch": epoch,
                                "step": result.steps,
                                "lr": lr,
                                "contrastive_loss": breakdown.contrastive,
                                "length_loss": breakdown.length,
                                "total_loss": breakdown.total,
                            },
                            sort_keys=True,
                        )
                        + "\n"
                    )
    finally:
        if log_fh is not None:
            log_fh.close()

    if checkpoint_path is not None:
        save_encoder(query, checkpoint_path, step=result.steps)
    return result


def _augmented_views(
    waveforms: Sequence[Waveform],
    idx: np.ndarray,
    policy: AugmentationPolicy,
    bank: Optional[NoiseBank],
    rng: np.random.Generator,
    input_len: int,
) -> np.ndarray:
    views = np.empty((len(idx), input_len))
    for row, i in enumerate(idx):
        w = waveforms[int(i)]
        for _ in range(policy.chain_depth):
            w, _ = sample_view(policy, w, bank, rng)
        views[row] = fix_length(w, input_len).samples
    return views
