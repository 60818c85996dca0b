# src/train/optim.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from src.config import TrainConfig
from src.diffcore import ops
from src.diffcore.graph import Node
from src.errors import DimensionError, TrainingDiverged


def mae_loss(h, y):
    """
    Mean absolute error over every entry.

    Works on plain arrays (returns a float) or on graph nodes (returns a
    scalar Node for backward). Both arguments must be in original units.
    """
    h_shape = h.shape if isinstance(h, Node) else np.shape(h)
    y_shape = y.shape if isinstance(y, Node) else np.shape(y)
    if tuple(h_shape) != tuple(y_shape):
        raise DimensionError("mae_loss", tuple(h_shape), tuple(y_shape))
    if isinstance(h, Node) or isinstance(y, Node):
        return ops.mean_abs_error(h, y)
    return float(np.mean(np.abs(np.asarray(h, dtype=np.float64) - np.asarray(y, dtype=np.float64))))


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: Mapping[str, np.ndarray], max_norm: float = 3.0) -> Tuple[Dict[str, np.ndarray], float]:
    """
    Scale all gradients by max_norm / norm when the global L2 norm exceeds max_norm.

    Returns (clipped gradients, norm before clipping).
    """
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise TrainingDiverged(f"non-finite gradient in {bad[:5]}", epoch=-1)

    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return {k: g for k, g in grads.items()}, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamState:
    """First/second moments per parameter and the step counter."""
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adamw_step(params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
               cfg: TrainConfig, lr: float) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One AdamW update with decoupled weight decay.

        p <- p * (1 - lr * wd)
        m <- b1 m + (1 - b1) g ;  v <- b2 v + (1 - b2) g^2
        p <- p - lr * m_hat / (sqrt(v_hat) + eps)

    Parameters without a gradient only receive the decay.
    """
    b1, b2 = cfg.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t

    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.m[name].shape != p.shape:
            raise DimensionError("adamw_step", state.m[name].shape, p.shape, detail=name)

        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        p = p * (1.0 - lr * cfg.weight_decay)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params[name] = p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)

    return params, state


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * lr_decay^epoch"""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.lr_decay ** epoch
