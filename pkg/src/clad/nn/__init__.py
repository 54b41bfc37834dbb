"""Hand-rolled neural-network machinery backing the reference encoder."""

from .adam import Adam
from .layers import BatchNorm1d, Conv1d, GlobalAvgPool, Layer, Linear, ReLU, Sequential

__all__ = [
    "Adam",
    "BatchNorm1d",
    "Conv1d",
    "GlobalAvgPool",
    "Layer",
    "Linear",
    "ReLU",
    "Sequential",
]
