# src/transform/clean.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Mapping, Tuple

import numpy as np
import pandas as pd

from src.errors import FitError
from src.schema import TrafficDataset

logger = logging.getLogger(__name__)

# Standard deviations below this are treated as degenerate
STD_FLOOR = 1e-8

# Channel 1 is always time-of-day; everything else is a metric channel
TOD_CHANNEL = 1


def metric_channels(d: TrafficDataset) -> Tuple[int, ...]:
    return tuple(c for c in range(d.n_channels) if c != TOD_CHANNEL)


def summarize(d: TrafficDataset) -> Dict[str, float]:
    """
    Table-2 style statistics of a dataset.

    Returns:
      sensors, edges, timesteps, entries (= N*K) and the population mean/std
      over the non-missing channel-0 entries.
    """
    metric = d.metric
    present = metric[~np.isnan(metric)]

    # Two-pass moments; empty datasets report NaN rather than raising
    if present.size:
        mean = float(present.mean())
        std = float(np.sqrt(((present - mean) ** 2).mean()))
    else:
        mean = std = float("nan")

    return {
        "sensors": d.n_sensors,
        "edges": len(d.edges),
        "timesteps": d.n_timesteps,
        "mean": mean,
        "std": std,
        "entries": d.n_sensors * d.n_timesteps,
        "missing": int(metric.size - present.size),
    }


@dataclass(frozen=True)
class Scaler:
    """
    Standardization of the metric channels plus MinMax of time-of-day.

    mean / std are keyed by channel index (0 and any extra metric channel).
    """
    mean: Mapping[int, float]
    std: Mapping[int, float]
    tod_min: float = 0.0
    tod_max: float = 1.0

    @property
    def metric_mean(self) -> float:
        return float(self.mean[0])

    @property
    def metric_std(self) -> float:
        return float(self.std[0])

    def inverse_metric(self, h: np.ndarray) -> np.ndarray:
        """Channel-0 values from standardized space back to dataset units."""
        return np.asarray(h) * self.metric_std + self.metric_mean

    def to_dict(self) -> Dict:
        return {
            "mean": {str(k): float(v) for k, v in self.mean.items()},
            "std": {str(k): float(v) for k, v in self.std.items()},
            "tod_min": float(self.tod_min),
            "tod_max": float(self.tod_max),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "Scaler":
        return cls(
            mean={int(k): float(v) for k, v in raw["mean"].items()},
            std={int(k): float(v) for k, v in raw["std"].items()},
            tod_min=float(raw["tod_min"]),
            tod_max=float(raw["tod_max"]),
        )


def fit_scaler(train: TrafficDataset) -> Scaler:
    """
    Fit the scaler on the training split only.

    - mu_x, sigma_x from non-missing entries of each metric channel
      (population std, floored at 1e-8)
    - tod_min / tod_max from channel 1
    """
    if train.n_timesteps == 0:
        raise FitError("cannot fit a scaler on an empty training split")

    means: Dict[int, float] = {}
    stds: Dict[int, float] = {}
    for c in metric_channels(train):
        vals = train.values[c]
        present = vals[~np.isnan(vals)]
        if present.size == 0:
            raise FitError(f"channel {train.channel_names[c]!r} is entirely missing in the training split")
        mu = float(present.mean())
        sd = float(present.std())
        if sd < STD_FLOOR:
            logger.warning("channel %r has zero variance in training data; std floored at %g",
                           train.channel_names[c], STD_FLOOR)
            sd = STD_FLOOR
        means[c], stds[c] = mu, sd

    tod = train.values[TOD_CHANNEL]
    return Scaler(mean=means, std=stds, tod_min=float(np.nanmin(tod)), tod_max=float(np.nanmax(tod)))


def apply_scaler(s: Scaler, d: TrafficDataset, direction: str = "forward") -> TrafficDataset:
    """
    forward: (x - mu) / sigma on metric channels, MinMax on time-of-day
    inverse: the exact inverse of forward
    Missing markers (NaN) pass through untouched.
    """
    if direction not in ("forward", "inverse"):
        raise ValueError(f"direction must be forward|inverse, got {direction!r}")

    out = np.array(d.values, dtype=np.float64, copy=True)
    for c, mu in s.mean.items():
        if c >= d.n_channels:
            continue
        sd = s.std[c]
        out[c] = (out[c] - mu) / sd if direction == "forward" else out[c] * sd + mu

    span = s.tod_max - s.tod_min
    if span > 0:
        if direction == "forward":
            out[TOD_CHANNEL] = (out[TOD_CHANNEL] - s.tod_min) / span
        else:
            out[TOD_CHANNEL] = out[TOD_CHANNEL] * span + s.tod_min
    return d.with_values(out)


def missing_count(d: TrafficDataset) -> int:
    """Missing markers across all metric channels."""
    return int(sum(np.isnan(d.values[c]).sum() for c in metric_channels(d)))


def impute_missing(d: TrafficDataset, train_mean: float | Mapping[int, float] | Scaler) -> TrafficDataset:
    """
    Replace missing readings with the training-split mean (not zero).

    `train_mean` may be a single value (channel 0), a {channel: mean}
    mapping, or a fitted Scaler (its means are the training means).
    """
    if isinstance(train_mean, Scaler):
        fills = dict(train_mean.mean)
    elif isinstance(train_mean, Mapping):
        fills = {int(k): float(v) for k, v in train_mean.items()}
    else:
        fills = {0: float(train_mean)}

    before = missing_count(d)
    if before == 0:
        return d

    out = np.array(d.values, dtype=np.float64, copy=True)
    for c, fill in fills.items():
        if c >= d.n_channels or c == TOD_CHANNEL:
            continue
        # Sensors with no readings at all are worth a warning
        frame = pd.DataFrame(out[c].T, columns=d.sensor_ids)
        dead = frame.columns[frame.isna().all(axis=0)].tolist()
        if dead and frame.shape[0] > 0:
            logger.warning("channel %r: sensors %s have no readings; filled entirely with %.4f",
                           d.channel_names[c], dead[:10], fill)
        out[c] = np.where(np.isnan(out[c]), fill, out[c])

    logger.info("imputed %d missing cells with training means", before - missing_count(d.with_values(out)))
    return d.with_values(out)
