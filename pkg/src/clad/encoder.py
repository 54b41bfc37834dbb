"""Pluggable waveform encoder, the desk-scale reference implementation, and
the query/key pair synchronized by momentum.

Any end-to-end detector minus its classification head satisfies the
encoder contract: a batch of fixed-length waveforms in, one D-dimensional
feature vector per waveform out, with a flat named parameter list. The
bundled TinyEncoder (strided conv blocks, global pooling, affine head)
trains in minutes on a CPU while leaving the contrastive mechanics
untouched.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from .audio import Waveform
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import BatchNorm1d, Conv1d, GlobalAvgPool, Linear, ReLU, Sequential


@dataclass(frozen=True)
class FeatureVector:
    """Unnormalized encoder output; the Euclidean length carries label
    information once the length objective has shaped the space."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"feature vector must be 1-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature vector components must be finite")
        object.__setattr__(self, "values", arr)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True)
class TinyEncoderConfig:
    """Reference encoder: conv->batchnorm->relu blocks, pooled, mapped to D."""

    input_len: int = 16000
    channels: Sequence[int] = (16, 32, 64)
    kernel: int = 9
    stride: int = 4
    feature_dim: int = 32
    dtype: str = "float64"

    def __post_init__(self):
        if not self.channels:
            raise ValueError("encoder needs at least one conv block")
        if self.feature_dim < 2:
            raise ValueError("feature_dim must be at least 2")
        if self.input_len <= 0 or self.kernel <= 0 or self.stride <= 0:
            raise ValueError("input_len, kernel and stride must be positive")
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))

    def to_dict(self) -> dict:
        return {
            "input_len": self.input_len,
            "channels": list(self.channels),
            "kernel": self.kernel,
            "stride": self.stride,
            "feature_dim": self.feature_dim,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TinyEncoderConfig":
        return cls(**d)


class TinyEncoder:
    """Conv stack over raw waveforms producing D-dimensional features."""

    def __init__(self, cfg: TinyEncoderConfig, seed: int):
        self.cfg = cfg
        self.seed = seed
        self.feature_dim = cfg.feature_dim
        self.input_len = cfg.input_len
        dtype = np.dtype(cfg.dtype)
        rng = np.random.Generator(np.random.PCG64(seed))
        layers = {}
        c_prev = 1
        length = cfg.input_len
        for i, c in enumerate(cfg.channels):
            if length < cfg.kernel:
                raise ValueError(
                    f"input_len {cfg.input_len} too short for {len(cfg.channels)} "
                    f"blocks of kernel {cfg.kernel}, stride {cfg.stride}"
                )
            layers[f"conv{i}"] = Conv1d(c_prev, c, cfg.kernel, cfg.stride, rng, dtype)
            layers[f"bn{i}"] = BatchNorm1d(c, dtype)
            layers[f"relu{i}"] = ReLU()
            length = layers[f"conv{i}"].out_len(length)
            c_prev = c
        layers["pool"] = GlobalAvgPool()
        layers["proj"] = Linear(c_prev, cfg.feature_dim, rng, dtype)
        self.net = Sequential(layers)
        self._dtype = dtype

    # -- encoder contract ----------------------------------------------
    def forward(self, batch: np.ndarray, training: bool = False,
                store_cache: bool = False, update_stats: bool = None) -> np.ndarray:
        """(N, input_len) waveform batch -> (N, D) features."""
        batch = np.asarray(batch)
        if batch.ndim != 2 or batch.shape[1] != self.input_len:
            raise ValueError(
                f"encoder expects (N, {self.input_len}) input, got {batch.shape}"
            )
        if update_stats is None:
            update_stats = training
        x = batch.astype(self._dtype, copy=False)[:, None, :]
        return self.net.forward(x, training, store_cache=store_cache,
                                update_stats=update_stats)

    def backward(self, dfeat: np.ndarray) -> None:
        """Backpropagate feature gradients; results land in named_grads()."""
        self.net.backward(dfeat.astype(self._dtype, copy=False))

    def named_params(self) -> Dict[str, np.ndarray]:
        return self.net.named_params()

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return self.net.named_buffers()

    def named_grads(self) -> Dict[str, np.ndarray]:
        return self.net.named_grads()

    def named_state(self) -> Dict[str, np.ndarray]:
        """Parameters plus buffers, the unit of checkpointing/momentum sync."""
        state = dict(self.named_params())
        state.update(self.named_buffers())
        return state

    def zero_grads(self) -> None:
        self.net.zero_grads()

    def load_state(self, tensors: Dict[str, np.ndarray]) -> None:
        state = self.named_state()
        missing = set(state) - set(tensors)
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)}")
        for key, arr in state.items():
            src = np.asarray(tensors[key], dtype=arr.dtype)
            if src.shape != arr.shape:
                raise ValueError(
                    f"tensor {key}: shape {src.shape} does not match {arr.shape}"
                )
            arr[...] = src


def tiny_encoder_new(cfg: TinyEncoderConfig, seed: int) -> TinyEncoder:
    """Deterministically initialized reference encoder."""
    return TinyEncoder(cfg, seed)


def save_encoder(enc: TinyEncoder, path, step: int = 0) -> None:
    save_checkpoint(path, enc.named_state(), {"encoder": enc.cfg.to_dict()}, step)


def load_encoder(path) -> TinyEncoder:
    tensors, config, _ = load_checkpoint(path)
    enc = TinyEncoder(TinyEncoderConfig.from_dict(config["encoder"]), seed=0)
    enc.load_state(tensors)
    return enc


@dataclass
class EncoderPair:
    """Gradient-trained query encoder and its momentum-averaged key twin."""

    query: TinyEncoder
    key: TinyEncoder
    momentum: float = 0.999

    def __post_init__(self):
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")


def clone_into_key(query: TinyEncoder, momentum: float = 0.999) -> EncoderPair:
    """Deep-copy the query encoder into an initially identical key encoder."""
    return EncoderPair(query=query, key=copy.deepcopy(query), momentum=momentum)


def momentum_update(pair: EncoderPair) -> None:
    """key := momentum * key + (1 - momentum) * query, over every tensor.

    Covers parameters and normalization buffers alike; the key side never
    sees gradients.
    """
    mu = pair.momentum
    q_state = pair.query.named_state()
    k_state = pair.key.named_state()
    if set(q_state) != set(k_state):
        raise ValueError("query/key tensor names diverged; encoders must be twins")
    for name, k_arr in k_state.items():
        q_arr = q_state[name]
        if q_arr.shape != k_arr.shape:
            raise ValueError(
                f"tensor {name}: key shape {k_arr.shape} != query shape {q_arr.shape}"
            )
        k_arr *= mu
        k_arr += (1.0 - mu) * q_arr


def encode_batch(enc: TinyEncoder, batch: List[Waveform]) -> List[FeatureVector]:
    """Inference-mode encoding, one FeatureVector per waveform, order kept."""
    if not batch:
        return []
    for w in batch:
        if len(w) != enc.input_len:
            raise ValueError(
                f"waveform length {len(w)} does not match encoder input_len "
                f"{enc.input_len}; fix_length first"
            )
    stacked = np.stack([w.samples for w in batch])
    feats = enc.forward(stacked, training=False)
    return [FeatureVector(f) for f in np.asarray(feats, dtype=np.float64)]
