# src/evaluate/exporters.py
"""
CSV exports behind the fundamental-diagram and sensor-pair plots.

Plot rendering happens downstream; these only write the data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from src.errors import ExportError
from src.load.to_disk import write_frame
from src.schema import TrafficDataset
from src.transform.features import day_class

SCATTER_COLUMNS = ["timestamp", "x", "y"]
PAIR_COLUMNS = ["timestamp", "value_i", "value_j", "day_class"]


def _sensor(d: TrafficDataset, sensor) -> int:
    try:
        return d.sensor_index(sensor)
    except KeyError as exc:
        raise ExportError(str(exc)) from None


def _channel(d: TrafficDataset, channel) -> int:
    try:
        return d.channel_index(channel)
    except KeyError as exc:
        raise ExportError(f"{exc}; available channels: {list(d.channel_names)}") from None


def scatter_frame(d: TrafficDataset, sensor, channel_x, channel_y) -> pd.DataFrame:
    s = _sensor(d, sensor)
    cx, cy = _channel(d, channel_x), _channel(d, channel_y)
    return pd.DataFrame({
        "timestamp": np.asarray(d.timestamps),
        "x": d.values[cx, s, :],
        "y": d.values[cy, s, :],
    }, columns=SCATTER_COLUMNS)


def export_scatter(d: TrafficDataset, sensor, channel_x, channel_y, out: Path | str) -> int:
    """One row per timestep: (timestamp, x, y) for one sensor. Returns the row count."""
    return write_frame(scatter_frame(d, sensor, channel_x, channel_y), out)


def pair_frame(d: TrafficDataset, sensor_i, sensor_j, time_range: Optional[Tuple[int, int]] = None,
               channel=0) -> pd.DataFrame:
    i, j = _sensor(d, sensor_i), _sensor(d, sensor_j)
    c = _channel(d, channel)
    start, stop = time_range if time_range is not None else (0, d.n_timesteps)
    start, stop = max(int(start), 0), min(int(stop), d.n_timesteps)
    if stop <= start:
        return pd.DataFrame(columns=PAIR_COLUMNS)

    stamps = np.asarray(d.timestamps[start:stop])
    return pd.DataFrame({
        "timestamp": stamps,
        "value_i": d.values[c, i, start:stop],
        "value_j": d.values[c, j, start:stop],
        "day_class": day_class(stamps, d.utc_offset_seconds),
    }, columns=PAIR_COLUMNS)


def export_pair_association(d: TrafficDataset, sensor_i, sensor_j, time_range: Optional[Tuple[int, int]],
                            out: Path | str, channel=0) -> int:
    """
    Rows (timestamp, value_i, value_j, day_class) over timestep range [start, stop).

    An empty range writes a file holding only the header.
    """
    return write_frame(pair_frame(d, sensor_i, sensor_j, time_range, channel), out)


def adjacency_frame(a: np.ndarray, sensor_ids) -> pd.DataFrame:
    """N x N heatmap table with sensor ids on both axes."""
    ids = [str(s) for s in sensor_ids]
    return pd.DataFrame(np.asarray(a, dtype=np.float64), index=pd.Index(ids, name="sensor"), columns=ids)


def export_adjacency(a: np.ndarray, sensor_ids, out: Path | str) -> int:
    return write_frame(adjacency_frame(a, sensor_ids), out, index=True)
