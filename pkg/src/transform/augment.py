# src/transform/augment.py
"""
Training-time augmentations, applied independently per datapoint.

Each function takes one window input x [C, N, L] (channel 0 = metric in
standardized units, channel 1 = time-of-day) and returns a new array of the
same shape. Order inside augment_window: occlusion -> permutation -> noise.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from src.config import AugmentConfig


def spatial_occlusion(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Each sensor, with probability p_occlude, has its metric scaled by occlude_scale over all L steps."""
    out = np.array(x, dtype=np.float64, copy=True)
    chosen = rng.random(out.shape[1]) < cfg.p_occlude
    out[0, chosen, :] *= cfg.occlude_scale
    return out


def temporal_permutation(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Each timestep, with probability p_permute, gets its sensor axis shuffled (all channels together)."""
    out = np.array(x, dtype=np.float64, copy=True)
    n_sensors, n_steps = out.shape[1], out.shape[2]
    chosen = np.flatnonzero(rng.random(n_steps) < cfg.p_permute)
    for t in chosen:
        perm = rng.permutation(n_sensors)
        out[:, :, t] = out[:, perm, t]
    return out


def uniform_noise(x: np.ndarray, cfg: AugmentConfig, train_std: float, rng: np.random.Generator) -> np.ndarray:
    """Add U[-s, s] noise to every metric entry, s = noise_scale * train_std."""
    out = np.array(x, dtype=np.float64, copy=True)
    s = cfg.noise_scale * float(train_std)
    if s > 0:
        out[0] += rng.uniform(-s, s, size=out[0].shape)
    return out


def augment_window(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator, train_std: float = 1.0) -> np.ndarray:
    """All three augmentations in the fixed order. train_std is 1 in standardized space."""
    x = spatial_occlusion(x, cfg, rng)
    x = temporal_permutation(x, cfg, rng)
    return uniform_noise(x, cfg, train_std, rng)


def datapoint_rng(seed: int, index: int) -> np.random.Generator:
    """(seed, datapoint index) fully determines the augmentation stream."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, int(index)])


def augment_batch(x: np.ndarray, cfg: AugmentConfig, seed: int, indices: Sequence[int],
                  train_std: float = 1.0) -> np.ndarray:
    """Augment a stacked batch x [B, C, N, L]; indices name each datapoint."""
    return np.stack(
        [augment_window(x[b], cfg, datapoint_rng(seed, i), train_std) for b, i in enumerate(indices)],
        axis=0,
    )
