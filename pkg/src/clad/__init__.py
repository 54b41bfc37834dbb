"""Desk-scale lab for manipulation attacks on audio deepfake detectors and
the contrastive defense that withstands them: attack suite, momentum-
contrastive pretraining with a feature-length objective, fine-tuning, and
the full FAR/EER robustness-evaluation protocol."""

__version__ = "0.1.0"

from .audio import Waveform, read_wav, write_wav, fix_length, measure_power
from .manipulate import ManipulationSpec, NoiseBank, AugmentationPolicy

__all__ = [
    "Waveform",
    "read_wav",
    "write_wav",
    "fix_length",
    "measure_power",
    "ManipulationSpec",
    "NoiseBank",
    "AugmentationPolicy",
    "__version__",
]
