"""Sparse-path transformer encoder with self-supervised pretraining and distillation."""

from ._kernels import BACKEND as KERNEL_BACKEND
from .encoder import EncoderConfig, EncoderModel, SparsePath, encode, encode_batch, sparsify
from .graph import PathDataset, RoadNetwork

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "EncoderConfig",
    "EncoderModel",
    "PathDataset",
    "RoadNetwork",
    "SparsePath",
    "encode",
    "encode_batch",
    "sparsify",
    "__version__",
]
