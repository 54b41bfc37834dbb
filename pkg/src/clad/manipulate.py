"""The seven manipulation families, their parameter grids, and the random
augmentation sampler used during contrastive pretraining.

All manipulations consume and produce raw waveforms. None of them clamp
the output to [-1, 1]: detectors consume floats, and clamping would
silently weaken the attack. Only time stretching and resampling change
the sample count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import dsp
from .audio import Waveform, fix_length, measure_power, read_wav

FADE_SHAPES = ("linear", "logarithmic", "exponential", "quarter_sine", "half_sine")

#: Canonical family order; also the deterministic order used when drawing
#: uniformly over enabled families.
FAMILIES = (
    "white_noise",
    "env_noise",
    "volume",
    "fade",
    "time_stretch",
    "resample",
    "time_shift",
    "echo",
)

#: The seven environmental-noise categories served by the noise bank.
NOISE_IDS = ("wind", "footsteps", "breathing", "coughing", "rain", "clock_tick", "sneezing")

_PARAM_FIELDS = {
    "white_noise": ("snr_db",),
    "env_noise": ("snr_db", "noise_id"),
    "volume": ("factor",),
    "fade": ("ratio", "shape"),
    "time_stretch": ("factor", "n_fft"),
    "resample": ("target_rate_hz",),
    "time_shift": ("shift",),
    "echo": ("delay", "attenuation"),
    "identity": (),
}


@dataclass(frozen=True)
class ManipulationSpec:
    """One manipulation family plus its parameters.

    Drives both evasion attacks (evaluation grids) and the augmentation
    views drawn during pretraining.
    """

    family: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in _PARAM_FIELDS:
            raise ValueError(f"unknown manipulation family {self.family!r}")
        expected = set(_PARAM_FIELDS[self.family])
        got = set(self.params)
        if expected != got:
            raise ValueError(
                f"{self.family} expects params {sorted(expected)}, got {sorted(got)}"
            )
        p = self.params
        if self.family == "volume" and p["factor"] < 0:
            raise ValueError("volume factor must be nonnegative")
        if self.family == "fade":
            if not 0.0 <= p["ratio"] <= 0.5:
                raise ValueError(f"fade ratio must lie in [0, 0.5], got {p['ratio']}")
            if p["shape"] not in FADE_SHAPES:
                raise ValueError(f"unknown fade shape {p['shape']!r}")
        if self.family == "time_stretch":
            if p["factor"] <= 0:
                raise ValueError("stretch factor must be positive")
            if p["n_fft"] <= 0 or p["n_fft"] % 2 != 0:
                raise ValueError("n_fft must be a positive even integer")
        if self.family == "resample" and p["target_rate_hz"] <= 0:
            raise ValueError("target rate must be positive")
        if self.family == "echo":
            if p["delay"] <= 0:
                raise ValueError("echo delay must be a positive sample count")
            if not 0.0 <= p["attenuation"] <= 1.0:
                raise ValueError("echo attenuation must lie in [0, 1]")
        object.__setattr__(self, "params", dict(p))

    # -- constructors -------------------------------------------------
    @classmethod
    def identity(cls) -> "ManipulationSpec":
        return cls("identity")

    @classmethod
    def white_noise(cls, snr_db: float) -> "ManipulationSpec":
        return cls("white_noise", {"snr_db": float(snr_db)})

    @classmethod
    def env_noise(cls, snr_db: float, noise_id: str) -> "ManipulationSpec":
        return cls("env_noise", {"snr_db": float(snr_db), "noise_id": noise_id})

    @classmethod
    def volume(cls, factor: float) -> "ManipulationSpec":
        return cls("volume", {"factor": float(factor)})

    @classmethod
    def fade(cls, ratio: float, shape: str = "linear") -> "ManipulationSpec":
        return cls("fade", {"ratio": float(ratio), "shape": shape})

    @classmethod
    def time_stretch(cls, factor: float, n_fft: int = 128) -> "ManipulationSpec":
        return cls("time_stretch", {"factor": float(factor), "n_fft": int(n_fft)})

    @classmethod
    def resample(cls, target_rate_hz: int) -> "ManipulationSpec":
        return cls("resample", {"target_rate_hz": int(target_rate_hz)})

    @classmethod
    def time_shift(cls, shift: int) -> "ManipulationSpec":
        return cls("time_shift", {"shift": int(shift)})

    @classmethod
    def echo(cls, delay: int, attenuation: float) -> "ManipulationSpec":
        return cls("echo", {"delay": int(delay), "attenuation": float(attenuation)})

    # -- (de)serialization --------------------------------------------
    def tag(self) -> str:
        """Compact label used in reports, score files and seeds."""
        if self.family == "identity":
            return "identity"
        parts = [str(self.params[k]) for k in _PARAM_FIELDS[self.family]]
        return "_".join([self.family] + parts)

    def to_dict(self) -> dict:
        return {"family": self.family, **self.params}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManipulationSpec":
        d = dict(d)
        family = d.pop("family")
        return cls(family, d)


@dataclass(frozen=True)
class NoiseBank:
    """Immutable map noise_id -> waveform for environmental-noise injection."""

    entries: Mapping[str, Waveform]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("noise bank must hold at least one entry")
        for noise_id, w in self.entries.items():
            if len(w) == 0:
                raise ValueError(f"noise bank entry {noise_id!r} is empty")
        object.__setattr__(self, "entries", dict(self.entries))

    def get(self, noise_id: str) -> Waveform:
        try:
            return self.entries[noise_id]
        except KeyError:
            raise KeyError(
                f"unknown noise id {noise_id!r}; available: {sorted(self.entries)}"
            ) from None

    @classmethod
    def from_directory(cls, path) -> "NoiseBank":
        """Load <noise_id>.wav files from a directory."""
        path = Path(path)
        entries = {p.stem: read_wav(p) for p in sorted(path.glob("*.wav"))}
        if not entries:
            raise FileNotFoundError(f"no .wav files found under {path}")
        return cls(entries)


# ---------------------------------------------------------------------------
# The seven manipulations
# ---------------------------------------------------------------------------


def white_noise_source(length: int, seed: int, sample_rate_hz: int = 16000) -> Waveform:
    """I.i.d. zero-mean unit-variance Gaussian samples, deterministic by seed."""
    if length <= 0:
        raise ValueError(f"noise length must be positive, got {length}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return Waveform(rng.standard_normal(length), sample_rate_hz)


def inject_noise(w: Waveform, snr_db: float, noise: Waveform) -> Waveform:
    """Add ``noise`` scaled so the signal-to-noise power ratio is ``snr_db``.

    Noise shorter than the signal is tiled; longer noise is prefix-cropped.
    """
    if len(w) == 0:
        raise ValueError("cannot inject noise into an empty waveform")
    p_signal = measure_power(w).mean_square_power
    if p_signal == 0.0:
        raise ValueError("SNR undefined for silent signal")
    fitted = fix_length(noise, len(w))
    p_noise = float(np.mean(np.square(fitted.samples)))
    if p_noise == 0.0:
        raise ValueError("SNR undefined for silent noise")
    alpha = np.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    return w.with_samples(w.samples + alpha * fitted.samples)


def control_volume(w: Waveform, factor: float) -> Waveform:
    """Scale every sample by ``factor``; no clamping."""
    if factor < 0:
        raise ValueError(f"volume factor must be nonnegative, got {factor}")
    return w.with_samples(w.samples * factor)


def fade_mask(fade_len: int, shape: str) -> np.ndarray:
    """Fade-in gain curve of ``fade_len`` points for one of the five shapes.

    Sampled at t_i = i/(fade_len-1); every shape runs from g(0)=0 to
    g(1)=1 (logarithmic after its clamp) and is monotone nondecreasing.
    """
    if shape not in FADE_SHAPES:
        raise ValueError(f"unknown fade shape {shape!r}")
    if fade_len <= 0:
        return np.ones(0)
    if fade_len == 1:
        return np.zeros(1)
    t = np.linspace(0.0, 1.0, fade_len)
    if shape == "linear":
        return t
    if shape == "exponential":
        return t * np.power(2.0, t - 1.0)
    if shape == "logarithmic":
        return np.minimum(1.0, np.log10(0.1 + t) + 1.0)
    if shape == "quarter_sine":
        return np.sin(t * np.pi / 2.0)
    return np.sin(t * np.pi - np.pi / 2.0) / 2.0 + 0.5  # half_sine


def fade(w: Waveform, ratio: float, shape: str = "linear") -> Waveform:
    """Apply a fade-in and mirrored fade-out over ``floor(ratio * len)`` samples."""
    if not 0.0 <= ratio <= 0.5:
        raise ValueError(f"fade ratio must lie in [0, 0.5], got {ratio}")
    n = int(np.floor(ratio * len(w)))
    if n == 0:
        return w
    g = fade_mask(n, shape)
    y = w.samples.copy()
    y[:n] *= g
    y[len(y) - n :] *= g[::-1]
    return w.with_samples(y)


def time_stretch(w: Waveform, factor: float, n_fft: int = 128) -> Waveform:
    """Phase-vocoder stretch to ``factor`` times the duration, pitch kept."""
    return w.with_samples(dsp.phase_vocoder_stretch(w.samples, factor, n_fft))


def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Resample the payload to ``target_rate_hz`` samples per second.

    Attack semantics: the returned waveform still claims the source rate,
    so a detector consumes the resampled samples as if nothing changed
    (pitch and duration shift together on playback).
    """
    y = dsp.resample_signal(w.samples, w.sample_rate_hz, target_rate_hz)
    return w.with_samples(y)


def time_shift(w: Waveform, shift: int) -> Waveform:
    """Circular shift: y[n] = x[(n - shift) mod len]; positive delays content."""
    return w.with_samples(np.roll(w.samples, shift))


def add_echo(w: Waveform, delay: int, attenuation: float) -> Waveform:
    """Add a copy delayed by ``delay`` samples and scaled by ``attenuation``."""
    if delay <= 0:
        raise ValueError(f"echo delay must be a positive sample count, got {delay}")
    if not 0.0 <= attenuation <= 1.0:
        raise ValueError(f"echo attenuation must lie in [0, 1], got {attenuation}")
    y = w.samples.copy()
    if delay < len(y):
        y[delay:] += attenuation * w.samples[: len(y) - delay]
    return w.with_samples(y)


def apply(
    spec: ManipulationSpec,
    w: Waveform,
    bank: Optional[NoiseBank] = None,
    seed: int = 0,
) -> Waveform:
    """Dispatch one spec onto a waveform; ``seed`` feeds noise generation only."""
    p = spec.params
    if spec.family == "identity":
        return w
    if spec.family == "white_noise":
        noise = white_noise_source(len(w), seed, w.sample_rate_hz)
        return inject_noise(w, p["snr_db"], noise)
    if spec.family == "env_noise":
        if bank is None:
            raise ValueError("env_noise manipulation requires a noise bank")
        return inject_noise(w, p["snr_db"], bank.get(p["noise_id"]))
    if spec.family == "volume":
        return control_volume(w, p["factor"])
    if spec.family == "fade":
        return fade(w, p["ratio"], p["shape"])
    if spec.family == "time_stretch":
        return time_stretch(w, p["factor"], p["n_fft"])
    if spec.family == "resample":
        return resample(w, p["target_rate_hz"])
    if spec.family == "time_shift":
        return time_shift(w, p["shift"])
    return add_echo(w, p["delay"], p["attenuation"])  # echo


def compose(
    specs: Sequence[ManipulationSpec],
    w: Waveform,
    bank: Optional[NoiseBank] = None,
    seed: int = 0,
) -> Waveform:
    """Left-to-right application of a manipulation chain."""
    if not specs:
        raise ValueError("compose requires a non-empty spec list")
    rng = np.random.Generator(np.random.PCG64(seed))
    out = w
    for spec in specs:
        out = apply(spec, out, bank, seed=int(rng.integers(0, 2**63)))
    return out


# ---------------------------------------------------------------------------
# Parameter grids and the augmentation policy
# ---------------------------------------------------------------------------


def default_parameter_grids() -> dict:
    """Evaluation parameter grid per family (the standard attack sweep)."""
    fades = [{"ratio": r, "shape": "linear"} for r in (0.5, 0.3, 0.1)]
    fades += [
        {"ratio": 0.5, "shape": s}
        for s in ("exponential", "quarter_sine", "half_sine", "logarithmic")
    ]
    return {
        "volume": [{"factor": f} for f in (0.5, 0.1)],
        "white_noise": [{"snr_db": s} for s in (15.0, 20.0, 25.0)],
        "env_noise": [{"snr_db": 20.0, "noise_id": nid} for nid in NOISE_IDS],
        "time_stretch": [{"factor": f, "n_fft": 128} for f in (1.1, 1.05, 0.95, 0.9)],
        "echo": [
            {"delay": 1000, "attenuation": 0.2},
            {"delay": 1000, "attenuation": 0.5},
            {"delay": 2000, "attenuation": 0.5},
        ],
        "time_shift": [{"shift": s} for s in (1600, 16000, 32000)],
        "fade": fades,
        "resample": [{"target_rate_hz": r} for r in (15000, 15500, 16500, 17000)],
    }


def default_eval_grid() -> list:
    """Identity plus every cell of the default parameter grids."""
    grid = [ManipulationSpec.identity()]
    grids = default_parameter_grids()
    for family in FAMILIES:
        grid.extend(ManipulationSpec(family, params) for params in grids[family])
    return grid


def representative_specs() -> list:
    """The compact attack set used for the combined-manipulation matrix."""
    return [
        ManipulationSpec.volume(0.1),
        ManipulationSpec.white_noise(15.0),
        ManipulationSpec.env_noise(20.0, "wind"),
        ManipulationSpec.time_stretch(0.9),
        ManipulationSpec.fade(0.5, "half_sine"),
        ManipulationSpec.resample(17000),
    ]


def family_representatives() -> dict:
    """One representative attack per family (leave-one-out evaluation rows)."""
    return {
        "volume": ManipulationSpec.volume(0.1),
        "white_noise": ManipulationSpec.white_noise(15.0),
        "env_noise": ManipulationSpec.env_noise(20.0, "rain"),
        "time_stretch": ManipulationSpec.time_stretch(0.9),
        "echo": ManipulationSpec.echo(1000, 0.2),
        "time_shift": ManipulationSpec.time_shift(16000),
        "fade": ManipulationSpec.fade(0.5, "half_sine"),
        "resample": ManipulationSpec.resample(17000),
    }


@dataclass(frozen=True)
class AugmentationPolicy:
    """Random one-manipulation-per-view augmentation for pretraining.

    Each call draws one family uniformly from ``enabled_families`` and its
    parameters uniformly from that family's ``parameter_ranges`` entry.
    ``chain_depth`` > 1 lets training stack several independent draws.
    """

    enabled_families: Sequence[str] = FAMILIES
    parameter_ranges: Mapping[str, Sequence[Mapping]] = None  # type: ignore[assignment]
    seed: int = 0
    chain_depth: int = 1

    def __post_init__(self):
        families = tuple(f for f in FAMILIES if f in set(self.enabled_families))
        unknown = set(self.enabled_families) - set(FAMILIES)
        if unknown:
            raise ValueError(f"unknown families in policy: {sorted(unknown)}")
        if not families:
            raise ValueError("augmentation policy needs at least one enabled family")
        if self.chain_depth < 1:
            raise ValueError("chain_depth must be at least 1")
        ranges = dict(self.parameter_ranges) if self.parameter_ranges else {}
        defaults = default_parameter_grids()
        for fam in families:
            choices = [dict(c) for c in ranges.get(fam, defaults[fam])]
            if not choices:
                raise ValueError(f"no parameter choices for family {fam!r}")
            for c in choices:
                ManipulationSpec(fam, c)  # validates against the spec invariants
            ranges[fam] = choices
        object.__setattr__(self, "enabled_families", families)
        object.__setattr__(self, "parameter_ranges", ranges)

    def without(self, family: str) -> "AugmentationPolicy":
        """Copy of the policy with one family removed (leave-one-out)."""
        remaining = tuple(f for f in self.enabled_families if f != family)
        return replace(self, enabled_families=remaining)

    def make_rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def sample_view(
    policy: AugmentationPolicy,
    w: Waveform,
    bank: Optional[NoiseBank],
    rng: np.random.Generator,
):
    """Draw one manipulation from the policy and apply it.

    Returns (manipulated waveform, the spec that was used). The stream of
    draws is deterministic given the generator state.
    """
    families = policy.enabled_families
    family = families[int(rng.integers(len(families)))]
    choices = policy.parameter_ranges[family]
    params = choices[int(rng.integers(len(choices)))]
    spec = ManipulationSpec(family, params)
    noise_seed = int(rng.integers(0, 2**63))
    return apply(spec, w, bank, seed=noise_seed), spec


# ---------------------------------------------------------------------------
# Bundled synthetic noise bank
# ---------------------------------------------------------------------------


def _band_noise(rng: np.random.Generator, n: int, sr: int, low_hz: float, high_hz: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    spec[(freqs < low_hz) | (freqs > high_hz)] = 0.0
    return np.fft.irfft(spec, n)


def _burst_envelope(n: int, sr: int, start_s: float, attack_s: float, decay_s: float) -> np.ndarray:
    t = np.arange(n) / sr - start_s
    env = np.where(t < 0, 0.0, np.minimum(t / attack_s, 1.0) * np.exp(-np.maximum(t - attack_s, 0.0) / decay_s))
    return env


def synthetic_noise_bank(
    sample_rate_hz: int = 16000, duration_s: float = 2.0, seed: int = 20
) -> NoiseBank:
    """Deterministic stand-in bank: band-shaped noise per category.

    Keeps environmental-noise attacks runnable without any corpus
    download; real recordings can be swapped in via
    :meth:`NoiseBank.from_directory`.
    """
    sr = sample_rate_hz
    n = int(duration_s * sr)
    t = np.arange(n) / sr
    rng = np.random.Generator(np.random.PCG64(seed))
    entries = {}

    x = _band_noise(rng, n, sr, 20, 300)
    entries["wind"] = x * (0.75 + 0.25 * np.sin(2 * np.pi * 0.4 * t))

    thump = np.zeros(n)
    for start in np.arange(0.1, duration_s, 0.55):
        thump += _burst_envelope(n, sr, start, 0.005, 0.05)
    entries["footsteps"] = _band_noise(rng, n, sr, 40, 160) * thump

    entries["breathing"] = _band_noise(rng, n, sr, 200, 2000) * (
        0.5 + 0.5 * np.sin(2 * np.pi * 0.25 * t)
    )

    cough = _burst_envelope(n, sr, 0.3, 0.01, 0.12) + _burst_envelope(n, sr, 0.9, 0.01, 0.12)
    entries["coughing"] = _band_noise(rng, n, sr, 300, 3000) * cough

    patter = 1.0 + 0.6 * (rng.random(n) < 0.002) * rng.standard_normal(n)
    entries["rain"] = _band_noise(rng, n, sr, 500, 7500) * patter

    ticks = np.zeros(n)
    for start in np.arange(0.05, duration_s, 0.5):
        ticks += _burst_envelope(n, sr, start, 0.001, 0.004)
    entries["clock_tick"] = _band_noise(rng, n, sr, 1000, 7000) * ticks

    entries["sneezing"] = _band_noise(rng, n, sr, 400, 6000) * _burst_envelope(
        n, sr, 0.4, 0.02, 0.25
    )

    normalized = {}
    for noise_id in NOISE_IDS:
        x = entries[noise_id]
        # Low room-noise floor so no prefix of any entry is silent.
        x = x + 0.002 * np.max(np.abs(x)) * rng.standard_normal(n)
        peak = np.max(np.abs(x))
        normalized[noise_id] = Waveform(0.9 * x / peak, sr)
    return NoiseBank(normalized)
