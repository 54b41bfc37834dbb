"""Pure-numpy implementations of the hot kernels.

These are the fallback used when the compiled extension is unavailable
(or forced off via ``CLAD_KERNEL_BACKEND=numpy``). The 1-D convolutions
are expressed as window gathers + BLAS contractions; the gradient
scatter runs as one vectorized slice-add per filter tap.

Shapes follow the convention:
    x   (N, C_in, L)        input batch
    w   (C_out, C_in, K)    filter taps
    y   (N, C_out, L_out)   valid convolution, L_out = (L - K) // stride + 1
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Strided view (N, C, K, L_out) of every filter window; no copy."""
    n, c, length = x.shape
    l_out = (length - k) // stride + 1
    sn, sc, sl = x.strides
    return as_strided(
        x,
        shape=(n, c, k, l_out),
        strides=(sn, sc, sl, sl * stride),
        writeable=False,
    )


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    win = _windows(x, w.shape[2], stride)
    # (N, C, K, L_out) x (C_out, C, K) -> (N, L_out, C_out)
    y = np.tensordot(win, w, axes=([1, 2], [1, 2]))
    y += b
    return np.ascontiguousarray(y.transpose(0, 2, 1))


def conv1d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, input_len: int
) -> np.ndarray:
    n, _, l_out = dy.shape
    c_in, k = w.shape[1], w.shape[2]
    # g[n, l, c, j] = sum_o dy[n, o, l] * w[o, c, j]
    g = np.tensordot(dy, w, axes=(1, 0))
    dx = np.zeros((n, c_in, input_len), dtype=dy.dtype)
    for j in range(k):
        dx[:, :, j : j + stride * l_out : stride] += g[:, :, :, j].transpose(0, 2, 1)
    return dx


def conv1d_backward_weight(dy: np.ndarray, x: np.ndarray, k: int, stride: int) -> np.ndarray:
    win = _windows(x, k, stride)
    # (N, C_out, L_out) x (N, C_in, K, L_out) -> (C_out, C_in, K)
    return np.tensordot(dy, win, axes=([0, 2], [0, 3]))


def resample_polyphase(
    x: np.ndarray,
    up: int,
    down: int,
    num_zeros: int,
    beta: float,
    out_len: int,
) -> np.ndarray:
    """Windowed-sinc resampling by the rational factor up/down.

    Output sample m interpolates the input at position m*down/up using a
    sinc kernel with cutoff min(1, up/down) and ``num_zeros`` zero
    crossings per side, tapered by a Kaiser window of shape ``beta``.
    The kernel is evaluated once per polyphase branch.
    """
    fc = 1.0 if up >= down else up / down
    half_width = num_zeros / fc
    j_max = int(np.ceil(half_width)) + 1
    taps = 2 * j_max + 1

    # Per-branch kernel table: branch p covers fractional offset p / up.
    frac = (np.arange(up, dtype=np.float64) / up)[:, None]
    u = frac - (np.arange(taps, dtype=np.float64) - j_max)[None, :]
    t = u * fc / num_zeros
    window = np.zeros_like(u)
    inside = np.abs(t) < 1.0
    window[inside] = np.i0(beta * np.sqrt(1.0 - t[inside] ** 2)) / np.i0(beta)
    table = fc * np.sinc(fc * u) * window

    m = np.arange(out_len, dtype=np.int64)
    q, p = np.divmod(m * down, up)
    idx = q[:, None] + (np.arange(taps, dtype=np.int64) - j_max)[None, :]
    valid = (idx >= 0) & (idx < x.shape[0])
    gathered = np.where(valid, x[np.clip(idx, 0, x.shape[0] - 1)], 0.0)
    return np.einsum("mt,mt->m", gathered, table[p])
