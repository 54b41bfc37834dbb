"""Labeled datasets: the bundled synthetic corpus and protocol-file ingestion.

The synthetic generator is the desk-scale stand-in for a real spoofing
corpus: "real" clips are vibrato-bearing harmonic stacks with a natural
1/k rolloff, "fake" clips share the stack but drop the vibrato, decay as
1/k^2 and reset phase every 512 samples -- a vocoder-style frame artifact
a detector can learn. Protocol files follow the five-column layout
``speaker utterance - system key`` with key bonafide/spoof.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .audio import Waveform, read_wav, write_wav

_FAKE_FRAME = 512  # phase-reset period of the synthetic fakes, in samples


class ProtocolParseError(ValueError):
    """Malformed protocol line; message carries the 1-based line number."""


@dataclass(frozen=True)
class LabeledSample:
    sample_id: str
    label: int  # 1 real, 0 fake
    waveform: Waveform

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")


@dataclass(frozen=True)
class ProtocolEntry:
    speaker_id: str
    utterance_id: str
    system_id: str
    key: str  # bonafide | spoof

    @property
    def label(self) -> int:
        return 1 if self.key == "bonafide" else 0


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 2000
    n_eval: int = 500
    real_fraction: float = 0.1
    duration_samples: int = 16000
    sample_rate_hz: int = 16000
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 2 or self.n_eval < 2:
            raise ValueError("n_train and n_eval must each be at least 2")
        if not 0.0 < self.real_fraction < 1.0:
            raise ValueError("real_fraction must lie strictly inside (0, 1)")
        if self.duration_samples <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("duration and sample rate must be positive")
        for n in (self.n_train, self.n_eval):
            n_real = int(round(self.real_fraction * n))
            if n_real < 1 or n_real >= n:
                raise ValueError(
                    f"real_fraction {self.real_fraction} leaves a split of {n} "
                    "without both classes"
                )

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


def _synth_clip(rng: np.random.Generator, cfg: SynthConfig, real: bool) -> np.ndarray:
    sr = cfg.sample_rate_hz
    n = cfg.duration_samples
    t = np.arange(n) / sr
    f0 = rng.uniform(120.0, 280.0)
    harmonic_phases = rng.uniform(0.0, 2.0 * np.pi, 5)

    if real:
        # 1/k harmonic rolloff with +/-3% vibrato at 5 Hz.
        vib_phase = rng.uniform(0.0, 2.0 * np.pi)
        inst = 1.0 + 0.03 * np.sin(2.0 * np.pi * 5.0 * t + vib_phase)
        phase = 2.0 * np.pi * f0 * np.cumsum(inst) / sr
        x = sum(
            np.sin(k * phase + harmonic_phases[k - 1]) / k for k in range(1, 6)
        )
    else:
        # 1/k^2 rolloff, no vibrato, phase restarts on every synthesis frame.
        t_local = (np.arange(n) % _FAKE_FRAME) / sr
        x = sum(
            np.sin(2.0 * np.pi * k * f0 * t_local + harmonic_phases[k - 1]) / k**2
            for k in range(1, 6)
        )

    attack = np.minimum(t / 0.02, 1.0)
    decay = np.exp(-np.maximum(t - 0.1, 0.0) / 0.8)
    x = x * attack * decay

    # Background noise at 30 dB SNR.
    noise = rng.standard_normal(n)
    alpha = np.sqrt(np.mean(x**2) / (np.mean(noise**2) * 10.0**3))
    x = x + alpha * noise
    return 0.9 * x / np.max(np.abs(x))


def _synth_split(rng: np.random.Generator, cfg: SynthConfig, n: int, prefix: str) -> List[LabeledSample]:
    n_real = int(round(cfg.real_fraction * n))
    samples = []
    for i in range(n):
        real = i < n_real
        samples.append(
            LabeledSample(
                sample_id=f"{prefix}_{i:05d}",
                label=int(real),
                waveform=Waveform(_synth_clip(rng, cfg, real), cfg.sample_rate_hz),
            )
        )
    return samples


def generate_synthetic(cfg: SynthConfig) -> Tuple[List[LabeledSample], List[LabeledSample]]:
    """Deterministic (train, eval) splits of the synthetic corpus."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    train = _synth_split(rng, cfg, cfg.n_train, "syn_train")
    evals = _synth_split(rng, cfg, cfg.n_eval, "syn_eval")
    return train, evals


# ---------------------------------------------------------------------------
# Protocol files
# ---------------------------------------------------------------------------


def parse_protocol_file(path) -> List[ProtocolEntry]:
    """Parse a five-column whitespace protocol file."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cols = line.split()
            if len(cols) != 5:
                raise ProtocolParseError(
                    f"{path}:{lineno}: expected 5 whitespace-separated columns, "
                    f"got {len(cols)}"
                )
            key = cols[4]
            if key not in ("bonafide", "spoof"):
                raise ProtocolParseError(
                    f"{path}:{lineno}: unknown key token {key!r} "
                    "(expected bonafide or spoof)"
                )
            entries.append(
                ProtocolEntry(
                    speaker_id=cols[0], utterance_id=cols[1], system_id=cols[3], key=key
                )
            )
    return entries


def _find_protocol_file(directory: Path) -> Path:
    preferred = directory / "protocol.txt"
    if preferred.exists():
        return preferred
    candidates = sorted(directory.glob("*.txt"))
    if len(candidates) == 1:
        return candidates[0]
    raise FileNotFoundError(
        f"{directory}: need exactly one protocol .txt file (or protocol.txt), "
        f"found {len(candidates)}"
    )


def parse_protocol(directory) -> List[LabeledSample]:
    """Load a protocol directory: protocol file plus WAVs named by utterance.

    Audio is resolved as ``<dir>/wav/<utterance_id>.wav`` or
    ``<dir>/<utterance_id>.wav``. Missing files are reported together.
    """
    directory = Path(directory)
    entries = parse_protocol_file(_find_protocol_file(directory))
    missing = []
    samples = []
    for e in entries:
        for candidate in (directory / "wav" / f"{e.utterance_id}.wav",
                          directory / f"{e.utterance_id}.wav"):
            if candidate.exists():
                samples.append(
                    LabeledSample(e.utterance_id, e.label, read_wav(candidate))
                )
                break
        else:
            missing.append(e.utterance_id)
    if missing:
        raise FileNotFoundError(
            f"{directory}: no audio for {len(missing)} utterance id(s): "
            + ", ".join(missing[:10])
            + ("..." if len(missing) > 10 else "")
        )
    return samples


def write_protocol_dir(samples: Sequence[LabeledSample], directory,
                       speaker_id: str = "SYN0") -> None:
    """Write samples as a protocol directory consumable by parse_protocol."""
    directory = Path(directory)
    (directory / "wav").mkdir(parents=True, exist_ok=True)
    with open(directory / "protocol.txt", "w") as fh:
        for s in samples:
            key = "bonafide" if s.label == 1 else "spoof"
            fh.write(f"{speaker_id} {s.sample_id} - - {key}\n")
            write_wav(s.waveform, directory / "wav" / f"{s.sample_id}.wav")
