"""Minimal differentiable numerical core (dense float64, rank <= 4)."""

from src.diffcore.graph import Graph, Node, as_array, backward
from src.diffcore.gradcheck import finite_difference_check, numerical_gradient
from src.diffcore.ops import (
    BatchNormState,
    activation,
    batch_norm,
    conv1d_dilated,
    matmul_batched,
    softmax_temperature,
)

__all__ = [
    "Graph",
    "Node",
    "as_array",
    "backward",
    "finite_difference_check",
    "numerical_gradient",
    "BatchNormState",
    "activation",
    "batch_norm",
    "conv1d_dilated",
    "matmul_batched",
    "softmax_temperature",
]
