# src/evaluate/baselines.py
from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
import pandas as pd

from src.errors import DimensionError, FitError
from src.schema import STEP_SECONDS, STEPS_PER_DAY, TrafficDataset, Window
from src.transform.features import make_windows

logger = logging.getLogger(__name__)


def time_slot(timestamps: np.ndarray, utc_offset_seconds: int = 0) -> np.ndarray:
    """Index of the 5-minute slot within the local day, 0..287."""
    local = np.asarray(timestamps, dtype=np.int64) + int(utc_offset_seconds)
    return (np.mod(local, 86400) // STEP_SECONDS).astype(np.int64)


def slot_means(train: TrafficDataset) -> pd.DataFrame:
    """
    Mean of channel 0 per (slot, sensor) over the training range.

    Computed as first + mean(x - first) so a slot whose values are all equal
    returns that value exactly.
    """
    frame = pd.DataFrame(train.metric.T, columns=list(train.sensor_ids))
    slots = pd.Series(time_slot(train.timestamps, train.utc_offset_seconds), name="slot")

    grouped = frame.groupby(slots)
    first = grouped.transform("first")
    dev_mean = (frame - first).groupby(slots).mean()
    return grouped.first() + dev_mean


def ha_baseline(train: TrafficDataset, target_timestamps: np.ndarray) -> np.ndarray:
    """
    Historical average forecasts [B, F, N].

    Each target timestamp gets the training mean of its time-of-day slot, so
    a given timestamp receives the same value whichever window or horizon
    step forecasts it. This is how "the same prediction at every horizon" is
    read: the prediction belongs to the slot, not to the window. It is not a
    constant forecast, since the F steps of one window fall in F consecutive
    slots and get their own slot means. Slots never seen in training fall
    back to the per-sensor training mean with a warning.
    """
    if train.n_timesteps == 0:
        raise FitError("historical average needs a non-empty training range")
    if train.n_timesteps < STEPS_PER_DAY:
        logger.warning("training range covers %d steps, less than one day (%d)",
                       train.n_timesteps, STEPS_PER_DAY)

    table = slot_means(train).reindex(range(STEPS_PER_DAY))
    uncovered = table.index[table.isna().all(axis=1)].tolist()
    if uncovered:
        logger.warning("historical average: %d slots have no training data; using the train mean",
                       len(uncovered))
    fallback = pd.Series(np.nanmean(train.metric, axis=1), index=table.columns)
    table = table.fillna(fallback)

    stamps = np.asarray(target_timestamps, dtype=np.int64)
    slots = time_slot(stamps, train.utc_offset_seconds)
    values = table.to_numpy()                       # [288, N]
    return values[slots.reshape(-1)].reshape(stamps.shape + (train.n_sensors,))


def persistence_baseline(inputs: np.ndarray, horizon: int = 12) -> np.ndarray:
    """
    Repeat the last observed value of every sensor over the horizon.

    inputs is [B, N, L] (channel 0 in original units); returns [B, F, N].
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 3:
        raise DimensionError("persistence_baseline", x.shape, detail="expected [B, N, L]")
    last = x[:, :, -1]
    return np.repeat(last[:, None, :], horizon, axis=1)


def window_metric_inputs(windows: Sequence[Window]) -> np.ndarray:
    """Channel-0 inputs [B, N, L] of a window list."""
    return np.stack([w.input[0] for w in windows], axis=0)


def persistence_on_split(raw: TrafficDataset, L: int = 12, F: int = 12) -> np.ndarray:
    return persistence_baseline(window_metric_inputs(make_windows(raw, L, F)), F)
