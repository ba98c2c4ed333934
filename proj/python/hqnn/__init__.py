"""Hybrid quantum-classical binary classifiers for 64x64 RGB imagery.

Thin re-export of the native module; see the repository README for the
full CLI and file-format documentation.
"""

from hqnn._core import (
    Model,
    __version__,
    build_model,
    circuit_forward,
    conv2d,
    default_seeds,
    gen_synthetic,
    load_checkpoint,
    param_shift_grad,
    train_synthetic,
    variance_stats,
)

__all__ = [
    "Model",
    "__version__",
    "build_model",
    "circuit_forward",
    "conv2d",
    "default_seeds",
    "gen_synthetic",
    "load_checkpoint",
    "param_shift_grad",
    "train_synthetic",
    "variance_stats",
]
