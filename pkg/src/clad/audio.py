"""Waveform container, 16-bit PCM mono WAV I/O, length fixing and power math.

Everything downstream (manipulations, encoders, the CLI) moves audio
around as a :class:`Waveform`: float64 samples nominally in [-1, 1] plus
a sample rate. WAV support is deliberately narrow -- RIFF/WAVE, format
code 1, 16 bits, one channel -- which is the delivery format of the
anti-spoofing corpora this lab targets.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

#: Project-default sample rate; files at other rates are accepted and keep
#: their own rate inside the Waveform.
DEFAULT_SAMPLE_RATE = 16000

_INT16_SCALE = 32768.0


class WavFormatError(ValueError):
    """Raised when a WAV file is not 16-bit PCM mono RIFF/WAVE."""


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float amplitudes (nominal [-1, 1]) at a fixed rate."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"waveform samples must be 1-D, got shape {arr.shape}")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("waveform samples must be finite (no NaN/Inf)")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        """Same rate, new sample payload."""
        return Waveform(samples=samples, sample_rate_hz=self.sample_rate_hz)


@dataclass(frozen=True)
class PowerStats:
    """Mean-square power and absolute peak of a waveform."""

    mean_square_power: float
    peak_abs: float


def read_wav(path: PathLike) -> Waveform:
    """Read a 16-bit PCM mono WAV file.

    Integer sample ``v`` maps to ``v / 32768`` exactly; amplitudes are not
    clamped on read even if the file encodes full-scale values.

    Raises:
        WavFormatError: stereo, non-16-bit or otherwise malformed input;
            the message names the offending field.
    """
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            samp_width = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            if n_channels != 1:
                raise WavFormatError(
                    f"{path}: stereo unsupported (channels={n_channels}, need mono)"
                )
            if samp_width != 2:
                raise WavFormatError(
                    f"{path}: unsupported bit depth (sample width {samp_width} bytes, need 16-bit PCM)"
                )
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise WavFormatError(f"{path}: malformed WAV header ({exc})") from exc
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(samples=ints.astype(np.float64) / _INT16_SCALE, sample_rate_hz=rate)


def write_wav(w: Waveform, path: PathLike) -> None:
    """Write a waveform as 16-bit PCM mono WAV.

    Amplitude ``a`` maps to ``clamp(round(a * 32768), -32768, 32767)``, so
    clipping happens only here, never on read.
    """
    path = Path(path)
    ints = np.clip(np.rint(w.samples * _INT16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(w.sample_rate_hz))
        wf.writeframes(ints.tobytes())


def fix_length(w: Waveform, target_len: int) -> Waveform:
    """Repeat or clip a waveform to exactly ``target_len`` samples.

    Short inputs are tiled end-to-end and the concatenation truncated;
    long inputs keep their prefix.
    """
    if target_len <= 0:
        raise ValueError(f"target_len must be positive, got {target_len}")
    n = len(w)
    if n == 0:
        raise ValueError("cannot fix the length of an empty waveform")
    if n == target_len:
        return w
    if n > target_len:
        return w.with_samples(w.samples[:target_len].copy())
    reps = -(-target_len // n)  # ceil
    return w.with_samples(np.tile(w.samples, reps)[:target_len])


def measure_power(w: Waveform) -> PowerStats:
    """Mean-square power and peak absolute amplitude."""
    if len(w) == 0:
        raise ValueError("cannot measure the power of an empty waveform")
    return PowerStats(
        mean_square_power=float(np.mean(np.square(w.samples))),
        peak_abs=float(np.max(np.abs(w.samples))),
    )
