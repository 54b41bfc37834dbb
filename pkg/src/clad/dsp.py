"""Spectral building blocks: STFT/ISTFT, phase-vocoder stretch, resampling.

The phase vocoder changes duration while keeping pitch: magnitudes are
interpolated onto a resampled frame grid while phases are re-accumulated
from the measured per-hop phase increments. The resampler delegates its
inner loop to the kernel backend (compiled or numpy).
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels

#: Kaiser shape and sinc half-width used for all resampling.
RESAMPLE_BETA = 14.77
RESAMPLE_NUM_ZEROS = 64


def hann_periodic(n: int) -> np.ndarray:
    """Periodic Hann window (sums to a constant at 50% overlap)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Hann-windowed STFT, no padding. Returns (n_fft//2 + 1, n_frames)."""
    if len(x) < n_fft:
        raise ValueError(f"signal length {len(x)} shorter than FFT size {n_fft}")
    n_frames = 1 + (len(x) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * hann_periodic(n_fft)
    return np.fft.rfft(frames, axis=1).T


def istft(spec: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` (window applied twice)."""
    win = hann_periodic(n_fft)
    frames = np.fft.irfft(spec, n=n_fft, axis=0)
    n_frames = frames.shape[1]
    out_len = n_fft + (n_frames - 1) * hop
    y = np.zeros(out_len)
    wsum = np.zeros(out_len)
    for t in range(n_frames):
        start = t * hop
        y[start : start + n_fft] += frames[:, t] * win
        wsum[start : start + n_fft] += win * win
    return y / np.maximum(wsum, 1e-12)


def phase_vocoder_stretch(x: np.ndarray, factor: float, n_fft: int) -> np.ndarray:
    """Stretch a signal to ``factor`` times its length without moving pitch.

    Hann analysis/synthesis with hop n_fft/2; the vocoder consumes frames
    at rate 1/factor. Output length lands within one hop of
    round(len(x) * factor).
    """
    if factor <= 0:
        raise ValueError(f"stretch factor must be positive, got {factor}")
    if n_fft <= 0 or n_fft % 2 != 0:
        raise ValueError(f"n_fft must be a positive even integer, got {n_fft}")
    if len(x) < n_fft:
        raise ValueError(
            f"signal length {len(x)} shorter than FFT size {n_fft}; cannot stretch"
        )
    hop = n_fft // 2
    rate = 1.0 / factor

    spec = stft(x, n_fft, hop)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    lo = np.floor(steps).astype(np.int64)
    frac = steps - lo

    spec_pad = np.pad(spec, ((0, 0), (0, 2)))
    c0 = spec_pad[:, lo]
    c1 = spec_pad[:, lo + 1]
    mag = (1.0 - frac) * np.abs(c0) + frac * np.abs(c1)

    # Expected phase advance per hop for each bin: 2*pi*k*hop/n_fft.
    phi_advance = np.linspace(0.0, np.pi * hop, n_bins)[:, None]
    dphase = np.angle(c1) - np.angle(c0) - phi_advance
    dphase -= 2.0 * np.pi * np.round(dphase / (2.0 * np.pi))
    increments = phi_advance + dphase

    phases = np.empty_like(mag)
    phases[:, 0] = np.angle(spec_pad[:, lo[0]])
    if phases.shape[1] > 1:
        phases[:, 1:] = phases[:, :1] + np.cumsum(increments[:, :-1], axis=1)

    return istft(mag * np.exp(1j * phases), n_fft, hop)


def resample_signal(x: np.ndarray, source_rate_hz: int, target_rate_hz: int) -> np.ndarray:
    """Resample a 1-D signal; output length is round(len * target / source)."""
    if source_rate_hz <= 0 or target_rate_hz <= 0:
        raise ValueError("sample rates must be positive")
    g = math.gcd(source_rate_hz, target_rate_hz)
    up = target_rate_hz // g
    down = source_rate_hz // g
    out_len = int(math.floor(len(x) * target_rate_hz / source_rate_hz + 0.5))
    return kernels.resample_polyphase(
        np.asarray(x, dtype=np.float64), up, down, RESAMPLE_NUM_ZEROS, RESAMPLE_BETA, out_len
    )
