# src/schema.py
"""
Record types shared by every pipeline stage.

Shapes follow the [channels, sensors, timesteps] convention:
  - channel 0 is the traffic metric in dataset units (speed or flow)
  - channel 1 is the time-of-day fraction in [0, 1)
  - channels 2.. are optional extra metrics (e.g. flow next to speed)
Missing readings are NaN, never zero.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

STEP_SECONDS = 300
STEPS_PER_DAY = 86400 // STEP_SECONDS   # 288


class Edge(NamedTuple):
    src: str
    dst: str
    distance: float


@dataclass(frozen=True)
class TrafficDataset:
    values: np.ndarray                  # [D_input, N, K_timesteps], float64
    timestamps: np.ndarray              # [K_timesteps], int64 epoch seconds
    edges: Tuple[Edge, ...]
    sensor_ids: Tuple[str, ...]
    metric_kind: str = "speed"
    coords: Optional[np.ndarray] = None   # [N, 2] (longitude, latitude)
    channel_names: Tuple[str, ...] = ("speed", "tod")
    utc_offset_seconds: int = 0
    step_seconds: int = STEP_SECONDS

    def __post_init__(self) -> None:
        # Datasets are immutable after load; views share the same read-only buffers
        values = np.asarray(self.values, dtype=np.float64)
        values.setflags(write=False)
        stamps = np.asarray(self.timestamps, dtype=np.int64)
        stamps.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "timestamps", stamps)
        object.__setattr__(self, "edges", tuple(Edge(*e) for e in self.edges))
        object.__setattr__(self, "sensor_ids", tuple(str(s) for s in self.sensor_ids))
        if self.coords is not None:
            coords = np.asarray(self.coords, dtype=np.float64)
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @property
    def n_channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_sensors(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_timesteps(self) -> int:
        return int(self.values.shape[2])

    @property
    def metric(self) -> np.ndarray:
        """Channel 0 as [N, K]."""
        return self.values[0]

    def channel_index(self, name_or_index: str | int) -> int:
        if isinstance(name_or_index, (int, np.integer)):
            idx = int(name_or_index)
            if not (0 <= idx < self.n_channels):
                raise KeyError(f"channel {idx} out of range (dataset has {self.n_channels})")
            return idx
        if name_or_index not in self.channel_names:
            raise KeyError(f"channel {name_or_index!r} not in {self.channel_names}")
        return self.channel_names.index(name_or_index)

    def sensor_index(self, sensor: str | int) -> int:
        if isinstance(sensor, (int, np.integer)) and str(sensor) not in self.sensor_ids:
            idx = int(sensor)
            if not (0 <= idx < self.n_sensors):
                raise KeyError(f"sensor {idx} out of range (dataset has {self.n_sensors})")
            return idx
        if str(sensor) not in self.sensor_ids:
            raise KeyError(f"unknown sensor {sensor!r}")
        return self.sensor_ids.index(str(sensor))

    def slice(self, start: int, stop: int) -> "TrafficDataset":
        """Contiguous timestep range [start, stop) as a view."""
        return dataclasses.replace(
            self,
            values=self.values[:, :, start:stop],
            timestamps=self.timestamps[start:stop],
        )

    def with_values(self, values: np.ndarray) -> "TrafficDataset":
        return dataclasses.replace(self, values=values)


@dataclass(frozen=True)
class Window:
    input: np.ndarray    # [D_input, N, L]
    target: np.ndarray   # [N, F], channel 0 only
    origin: int          # start timestep index within its split


@dataclass(frozen=True)
class AdjacencyPair:
    a_r: np.ndarray                      # [N, N] physical RBF adjacency
    sigma_d: float
    a_adp: Optional[np.ndarray] = None   # [N, N] learned, filled in after training


@dataclass
class SplitViews:
    train: TrafficDataset
    val: TrafficDataset
    test: TrafficDataset
    bounds: List[Tuple[int, int]] = field(default_factory=list)
