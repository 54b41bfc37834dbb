"""Minimal dense/conv layer zoo with hand-derived backward passes.

Just enough machinery for the reference detector: valid 1-D convolution,
batch normalization, ReLU, global average pooling and an affine head.
Every layer keeps its parameters in ``params`` (trained) and statistics
in ``buffers`` (momentum-synced, never differentiated), both plain numpy
arrays updated in place. Forward passes cache activations only when
``store_cache`` is set, so frozen inference stays stateless and
thread-safe.
"""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .. import kernels


class Layer:
    """Base layer: named parameter/buffer/grad dicts plus forward/backward."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x: np.ndarray, training: bool, store_cache: bool = False,
                update_stats: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self) -> None:
        self.grads = {}


class Conv1d(Layer):
    """Valid (unpadded) strided 1-D convolution over (N, C, L) batches."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int,
                 rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        bound = np.sqrt(1.0 / (c_in * kernel))
        self.params["weight"] = rng.uniform(-bound, bound, (c_out, c_in, kernel)).astype(dtype)
        self.params["bias"] = np.zeros(c_out, dtype=dtype)

    def out_len(self, length: int) -> int:
        return (length - self.kernel) // self.stride + 1

    def forward(self, x, training, store_cache=False, update_stats=False):
        y = kernels.conv1d_forward(x, self.params["weight"], self.params["bias"], self.stride)
        if store_cache:
            self._cache = x
        return y

    def backward(self, dy):
        x = self._cache
        self.grads["weight"] = kernels.conv1d_backward_weight(dy, x, self.kernel, self.stride)
        self.grads["bias"] = dy.sum(axis=(0, 2))
        return kernels.conv1d_backward_input(dy, self.params["weight"], self.stride, x.shape[2])


class BatchNorm1d(Layer):
    """Per-channel normalization over batch and time for (N, C, L) inputs.

    Training mode normalizes with batch statistics; inference mode uses the
    running buffers, which makes frozen scoring batch-independent.
    """

    def __init__(self, channels: int, dtype=np.float64, eps: float = 1e-5,
                 stats_momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.stats_momentum = stats_momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)

    def forward(self, x, training, store_cache=False, update_stats=False):
        if training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            if update_stats:
                m = x.shape[0] * x.shape[2]
                unbiased = var * (m / max(m - 1, 1))
                rho = self.stats_momentum
                self.buffers["running_mean"] *= 1.0 - rho
                self.buffers["running_mean"] += rho * mean
                self.buffers["running_var"] *= 1.0 - rho
                self.buffers["running_var"] += rho * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        y = self.params["gamma"][None, :, None] * xhat + self.params["beta"][None, :, None]
        if store_cache:
            self._cache = (xhat, inv)
        return y

    def backward(self, dy):
        xhat, inv = self._cache
        self.grads["gamma"] = np.sum(dy * xhat, axis=(0, 2))
        self.grads["beta"] = dy.sum(axis=(0, 2))
        dxhat = dy * self.params["gamma"][None, :, None]
        mean_dxhat = dxhat.mean(axis=(0, 2))
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=(0, 2))
        return inv[None, :, None] * (
            dxhat - mean_dxhat[None, :, None] - xhat * mean_dxhat_xhat[None, :, None]
        )


class ReLU(Layer):
    def forward(self, x, training, store_cache=False, update_stats=False):
        y = np.maximum(x, 0.0)
        if store_cache:
            self._cache = x > 0
        return y

    def backward(self, dy):
        return dy * self._cache


class GlobalAvgPool(Layer):
    """(N, C, L) -> (N, C) mean over time."""

    def forward(self, x, training, store_cache=False, update_stats=False):
        if store_cache:
            self._cache = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dy):
        length = self._cache
        return np.repeat(dy[:, :, None] / length, length, axis=2)


class Linear(Layer):
    """Affine map for (N, D_in) batches."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        bound = np.sqrt(1.0 / d_in)
        self.params["weight"] = rng.uniform(-bound, bound, (d_out, d_in)).astype(dtype)
        self.params["bias"] = np.zeros(d_out, dtype=dtype)

    def forward(self, x, training, store_cache=False, update_stats=False):
        if store_cache:
            self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        x = self._cache
        self.grads["weight"] = dy.T @ x
        self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"]


class Sequential:
    """Named layer stack with flattened parameter/buffer views."""

    def __init__(self, layers: Dict[str, Layer]):
        self.layers = dict(layers)

    def forward(self, x, training, store_cache=False, update_stats=False):
        for layer in self.layers.values():
            x = layer.forward(x, training, store_cache=store_cache, update_stats=update_stats)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers.values()):
            dy = layer.backward(dy)
        return dy

    def named_params(self) -> Dict[str, np.ndarray]:
        return {
            f"{name}.{key}": arr
            for name, layer in self.layers.items()
            for key, arr in layer.params.items()
        }

    def named_buffers(self) -> Dict[str, np.ndarray]:
        return {
            f"{name}.{key}": arr
            for name, layer in self.layers.items()
            for key, arr in layer.buffers.items()
        }

    def named_grads(self) -> Dict[str, np.ndarray]:
        return {
            f"{name}.{key}": arr
            for name, layer in self.layers.items()
            for key, arr in layer.grads.items()
        }

    def zero_grads(self) -> None:
        for layer in self.layers.values():
            layer.zero_grads()
