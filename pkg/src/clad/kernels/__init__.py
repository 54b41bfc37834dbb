"""Kernel backend selection.

The hot kernels (1-D convolution forward/backward, polyphase resampling)
exist twice: a compiled Cython core and a pure-numpy fallback, selected
at import. The default ``auto`` mode routes each call to the side that
measured faster (see benchmarks/bench_kernels.py): the compiled loops win
on skinny convolutions (few input channels, where the window-gather blowup
hurts BLAS) and on the resampler's irregular gather, while the BLAS-backed
numpy contractions win on wide channel counts. Set
``CLAD_KERNEL_BACKEND`` to ``compiled`` or ``numpy`` to force one side.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_backend

_MODE = os.environ.get("CLAD_KERNEL_BACKEND", "auto").strip().lower() or "auto"
if _MODE not in ("auto", "compiled", "numpy"):
    raise ValueError(
        f"CLAD_KERNEL_BACKEND must be 'auto', 'compiled' or 'numpy', got {_MODE!r}"
    )

compiled_backend = None
if _MODE != "numpy":
    try:
        from . import _compiled as compiled_backend  # type: ignore[no-redef]
    except ImportError:
        compiled_backend = None
        if _MODE == "compiled":
            raise ImportError(
                "CLAD_KERNEL_BACKEND=compiled but the clad.kernels._compiled "
                "extension is not built; reinstall the package or drop the override"
            )

if compiled_backend is None:
    BACKEND = "numpy"
elif _MODE == "compiled":
    BACKEND = "compiled"
else:
    BACKEND = "auto"

# Measured crossover: window gathering beats BLAS only while C_in is small.
_SKINNY_C_IN = 4


def _conv_impl(c_in: int):
    if compiled_backend is None or _MODE == "numpy":
        return numpy_backend
    if _MODE == "compiled":
        return compiled_backend
    return compiled_backend if c_in <= _SKINNY_C_IN else numpy_backend


def conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    return _conv_impl(x.shape[1]).conv1d_forward(x, w, b, stride)


def conv1d_backward_input(
    dy: np.ndarray, w: np.ndarray, stride: int, input_len: int
) -> np.ndarray:
    return _conv_impl(w.shape[1]).conv1d_backward_input(dy, w, stride, input_len)


def conv1d_backward_weight(dy: np.ndarray, x: np.ndarray, k: int, stride: int) -> np.ndarray:
    # BLAS reductions win this one at every measured shape.
    if _MODE == "compiled" and compiled_backend is not None:
        return compiled_backend.conv1d_backward_weight(dy, x, k, stride)
    return numpy_backend.conv1d_backward_weight(dy, x, k, stride)


def resample_polyphase(
    x: np.ndarray, up: int, down: int, num_zeros: int, beta: float, out_len: int
) -> np.ndarray:
    if compiled_backend is not None and _MODE != "numpy":
        return compiled_backend.resample_polyphase(x, up, down, num_zeros, beta, out_len)
    return numpy_backend.resample_polyphase(x, up, down, num_zeros, beta, out_len)


def available_backends() -> dict:
    """Name -> module for every importable backend (for tests/benchmarks)."""
    out = {"numpy": numpy_backend}
    if compiled_backend is not None:
        out["compiled"] = compiled_backend
    return out
