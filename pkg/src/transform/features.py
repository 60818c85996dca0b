# src/transform/features.py
from __future__ import annotations

import logging
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import ConfigError, FitError, SplitTooSmallError, WindowError
from src.schema import AdjacencyPair, Edge, SplitViews, TrafficDataset, Window

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


def time_of_day(timestamps: np.ndarray, utc_offset_seconds: int = 0) -> np.ndarray:
    """
    Fraction of the local day elapsed at each timestamp, in [0, 1).

    Local midnight is a fixed offset from UTC (no DST arithmetic).
    """
    local = np.asarray(timestamps, dtype=np.int64) + int(utc_offset_seconds)
    return np.mod(local, 86400).astype(np.float64) / 86400.0


def day_class(timestamps: np.ndarray, utc_offset_seconds: int = 0) -> np.ndarray:
    """
    'weekday' / 'weekend' label per timestamp.

    Day-of-week: 0=Mon, ..., 6=Sun; Saturday (5) and Sunday (6) are weekend.
    """
    local = pd.to_datetime(np.asarray(timestamps, dtype=np.int64) + int(utc_offset_seconds), unit="s")
    is_weekend = pd.Series(local).dt.weekday.isin([5, 6]).to_numpy()
    return np.where(is_weekend, "weekend", "weekday")


def build_adjacency(edges: Iterable[Edge], n: int, sensor_ids: Optional[Sequence[str]] = None) -> AdjacencyPair:
    """
    Gaussian RBF adjacency from road distances.

      sigma_d = population std of all listed edge distances
      A[i, j] = exp(-(d(i, j) / sigma_d)^2) for each listed directed edge
      A[i, i] = 1, absent pairs 0

    Endpoints are resolved through `sensor_ids` when given, otherwise they
    must already be integer indices.
    """
    edges = list(edges)
    if not edges:
        raise FitError("adjacency needs at least one edge")

    index = {s: i for i, s in enumerate(sensor_ids)} if sensor_ids is not None else None

    def _idx(endpoint) -> int:
        return index[str(endpoint)] if index is not None else int(endpoint)

    distances = np.array([float(e[2]) for e in edges], dtype=np.float64)
    if (distances < 0).any():
        raise FitError("edge distances must be >= 0")

    # Population (ddof=0) standard deviation of the edge distances
    sigma = float(distances.std())
    if sigma < SIGMA_FLOOR:
        logger.warning("all %d edge distances are equal; sigma_d floored at %g", len(edges), SIGMA_FLOOR)
        sigma = SIGMA_FLOOR

    a = np.zeros((n, n), dtype=np.float64)
    for e, d in zip(edges, distances):
        a[_idx(e[0]), _idx(e[1])] = np.exp(-((d / sigma) ** 2))

    # Self-loops carry weight 1 (the hop-0 term relies on them)
    np.fill_diagonal(a, 1.0)
    return AdjacencyPair(a_r=a, sigma_d=sigma)


def row_normalize(a: np.ndarray) -> np.ndarray:
    """D^-1 A: rows scaled to sum to 1 (zero rows stay zero)."""
    sums = a.sum(axis=1, keepdims=True)
    return np.divide(a, sums, out=np.zeros_like(a), where=sums > 0)


def split_bounds(n_steps: int, ratio: Sequence[int | float]) -> List[Tuple[int, int]]:
    """
    Contiguous [start, stop) ranges; boundaries at the floor of cumulative fractions.
    """
    if len(ratio) != 3 or any(r <= 0 for r in ratio):
        raise ConfigError(f"split ratio must be three positive parts, got {tuple(ratio)}")
    total = float(sum(ratio))
    cum1 = ratio[0]
    cum2 = ratio[0] + ratio[1]
    if all(float(r).is_integer() for r in ratio):
        # exact integer arithmetic for the usual 7:1:2 / 6:2:2 ratios
        b1 = (n_steps * int(cum1)) // int(total)
        b2 = (n_steps * int(cum2)) // int(total)
    else:
        b1 = int(np.floor(n_steps * cum1 / total))
        b2 = int(np.floor(n_steps * cum2 / total))
    return [(0, b1), (b1, b2), (b2, n_steps)]


def split_temporal(d: TrafficDataset, ratio: Sequence[int | float] = (7, 1, 2), L: int = 12, F: int = 12) -> SplitViews:
    """
    Cut the raw timeline into train / val / test views.

    Windows are formed later inside each view, so no window straddles two
    splits. Every split must hold at least one window (L + F timesteps).
    """
    bounds = split_bounds(d.n_timesteps, ratio)
    for name, (start, stop) in zip(("train", "val", "test"), bounds):
        if stop - start < L + F:
            raise SplitTooSmallError(
                f"{name} split has {stop - start} timesteps, needs at least L+F={L + F}"
            )
    train, val, test = (d.slice(s, e) for s, e in bounds)
    return SplitViews(train=train, val=val, test=test, bounds=bounds)


def make_windows(d: TrafficDataset, L: int = 12, F: int = 12) -> List[Window]:
    """
    Sliding windows ordered by origin.

    Window i reads inputs [i, i+L) (all channels) and targets [i+L, i+L+F)
    (channel 0). Count = K - L - F + 1. Inputs/targets are read-only views.
    """
    k = d.n_timesteps
    if k < L + F:
        raise WindowError(f"{k} timesteps cannot hold one window of L={L} + F={F}")
    values = d.values
    return [
        Window(input=values[:, :, i:i + L], target=values[0, :, i + L:i + L + F], origin=i)
        for i in range(k - L - F + 1)
    ]


def stack_windows(windows: Sequence[Window], channels: Sequence[int] = (0, 1)) -> Tuple[np.ndarray, np.ndarray]:
    """
    Batch windows for the model: x [B, len(channels), N, L], y [B, F, N].
    """
    x = np.stack([w.input[list(channels)] for w in windows], axis=0)
    y = np.stack([w.target.T for w in windows], axis=0)
    return x, y
