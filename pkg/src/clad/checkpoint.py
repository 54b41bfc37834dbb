"""Versioned checkpoint container.

Layout (little-endian):

    bytes 0..7    magic ``CLADCKPT``
    bytes 8..11   format version (uint32, currently 1)
    bytes 12..15  header length H (uint32)
    bytes 16..16+H  UTF-8 JSON header::

        {"config": {...},        # arbitrary JSON config echo
         "step": <int>,          # training step counter
         "tensors": [{"key": str, "dtype": str, "shape": [...],
                      "offset": int, "nbytes": int}, ...]}

    then the raw tensor payload, offsets relative to the payload start.

Tensor keys are stable path strings ("encoder.conv0.weight", ...), so the
same container holds bare encoders and full classifiers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"CLADCKPT"
VERSION = 1


class CheckpointError(ValueError):
    """Raised for bad magic, version, or malformed container contents."""


def save_checkpoint(path, tensors: Dict[str, np.ndarray], config: dict, step: int) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index = []
    blobs = []
    offset = 0
    for key in sorted(tensors):
        arr = np.ascontiguousarray(tensors[key])
        blob = arr.tobytes()
        index.append(
            {
                "key": key,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"config": config, "step": int(step), "tensors": index}, sort_keys=True
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Tuple[Dict[str, np.ndarray], dict, int]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}, expected {MAGIC!r}")
    version, header_len = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed header ({exc})") from exc
    payload = raw[16 + header_len :]
    tensors = {}
    for entry in header["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + n], dtype=np.dtype(entry["dtype"]))
        tensors[entry["key"]] = arr.reshape(entry["shape"]).copy()
    return tensors, header["config"], int(header["step"])
