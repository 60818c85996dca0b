# src/extract/synthetic.py
"""
Synthetic traffic source for desk-scale experiments.

Each sensor gets its own daily profile offset (phase), weekends get a
damped amplitude, and every directed edge u -> s feeds a lagged, scaled
copy of u's deviation into s. With noise, coupling and phase spread all at
zero the series is exactly daily-periodic.

Usage
-----
from src.config import SynthConfig
from src.extract.synthetic import generate_graph, generate_traffic
cfg = SynthConfig(n_sensors=8, days=7, seed=7)
ds = generate_traffic(cfg, generate_graph(cfg))
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from src.config import SynthConfig, derive_seed
from src.errors import ConfigError
from src.schema import STEP_SECONDS, STEPS_PER_DAY, Edge, TrafficDataset
from src.transform.features import day_class, time_of_day

logger = logging.getLogger(__name__)

# Road distances in meters
DISTANCE_RANGE = (200.0, 2000.0)

# Daily profile: two Gaussian bumps (minute of day, height, width in minutes)
MORNING_PEAK = (480.0, 0.9, 60.0)
EVENING_PEAK = (1050.0, 0.75, 75.0)

# Upper bound on the summed incoming coupling gain of one sensor
MAX_INCOMING_GAIN = 0.6

# Coordinate layout center (lon, lat) and spread in degrees
LAYOUT_CENTER = (-118.25, 34.05)
LAYOUT_SPAN = 0.1


def sensor_ids_for(n: int) -> Tuple[str, ...]:
    return tuple(f"s{i}" for i in range(n))


# ---------- graph ----------

def _ring(n: int) -> List[Tuple[int, int]]:
    pairs = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    return sorted(pairs)


def _grid(n: int) -> List[Tuple[int, int]]:
    rows = max(int(np.floor(np.sqrt(n))), 1)
    cols = int(np.ceil(n / rows))
    pairs = []
    for i in range(n):
        c = i % cols
        right, down = i + 1, i + cols
        if c + 1 < cols and right < n:
            pairs.append((i, right))
        if down < n:
            pairs.append((i, down))
    return pairs


def _random(n: int, p: float, rng: np.random.Generator) -> List[Tuple[int, int]]:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]


def is_strongly_connected(n: int, pairs: Sequence[Tuple[int, int]]) -> bool:
    """Pairs are two-way roads; checks the directed graph they expand to."""
    if not pairs:
        return n == 1
    src = [i for i, j in pairs] + [j for i, j in pairs]
    dst = [j for i, j in pairs] + [i for i, j in pairs]
    m = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
    count, _ = connected_components(m, directed=True, connection="strong")
    return count == 1


def generate_graph(cfg: SynthConfig) -> Tuple[Edge, ...]:
    """
    Directed edge list with road distances.

    Every undirected road becomes two directed edges sharing one distance
    drawn uniformly from [200, 2000] m. A disconnected random graph is
    re-drawn with the next sub-seed, up to cfg.max_retries times.
    """
    cfg.validate()
    n = cfg.n_sensors
    ids = sensor_ids_for(n)

    pairs: List[Tuple[int, int]] = []
    rng = np.random.default_rng(derive_seed(cfg.seed, "graph/0"))
    if cfg.topology == "ring":
        pairs = _ring(n)
    elif cfg.topology == "grid":
        pairs = _grid(n)
    else:
        for attempt in range(cfg.max_retries):
            rng = np.random.default_rng(derive_seed(cfg.seed, f"graph/{attempt}"))
            pairs = _random(n, cfg.p_edge, rng)
            if is_strongly_connected(n, pairs):
                break
            logger.debug("random graph attempt %d disconnected; redrawing", attempt)
        else:
            raise ConfigError(
                f"no connected random graph with p_edge={cfg.p_edge} for {n} sensors "
                f"after {cfg.max_retries} draws; raise synth.p_edge"
            )

    lo, hi = DISTANCE_RANGE
    distances = rng.uniform(lo, hi, size=len(pairs))
    edges: List[Edge] = []
    for (i, j), dist in zip(pairs, distances):
        edges.append(Edge(ids[i], ids[j], float(dist)))
        edges.append(Edge(ids[j], ids[i], float(dist)))
    return tuple(edges)


def sensor_layout(cfg: SynthConfig) -> np.ndarray:
    """[N, 2] (longitude, latitude) matching the topology's shape."""
    n = cfg.n_sensors
    lon0, lat0 = LAYOUT_CENTER
    if cfg.topology == "ring":
        angle = 2.0 * np.pi * np.arange(n) / n
        offsets = np.stack([np.cos(angle), np.sin(angle)], axis=1) * (LAYOUT_SPAN / 2)
    elif cfg.topology == "grid":
        cols = int(np.ceil(n / max(int(np.floor(np.sqrt(n))), 1)))
        r, c = np.divmod(np.arange(n), cols)
        offsets = np.stack([c, r], axis=1) * (LAYOUT_SPAN / max(cols, 1))
    else:
        rng = np.random.default_rng(derive_seed(cfg.seed, "layout"))
        offsets = rng.uniform(-LAYOUT_SPAN / 2, LAYOUT_SPAN / 2, size=(n, 2))
    return offsets + np.array([lon0, lat0])


# ---------- traffic ----------

def daily_profile() -> np.ndarray:
    """
    Zero-mean daily shape over the 288 slots.

    Sum of a morning and an evening bump (circular minute distance), clipped
    to [0, 1], then centered.
    """
    minutes = np.arange(STEPS_PER_DAY) * (STEP_SECONDS / 60.0)
    shape = np.zeros(STEPS_PER_DAY)
    for center, height, width in (MORNING_PEAK, EVENING_PEAK):
        dist = np.abs(minutes - center)
        dist = np.minimum(dist, 1440.0 - dist)
        shape += height * np.exp(-0.5 * (dist / width) ** 2)
    shape = np.clip(shape, 0.0, 1.0)
    return shape - shape.mean()


def draw_phases(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-sensor phase in slots; distinct multiples of 5 minutes while enough exist."""
    slots = int(cfg.phase_spread // (STEP_SECONDS / 60.0))
    candidates = np.arange(slots + 1)
    if slots == 0:
        return np.zeros(cfg.n_sensors, dtype=np.int64)
    replace = cfg.n_sensors > candidates.size
    if replace:
        logger.warning("phase_spread=%g min gives %d distinct phases for %d sensors; phases will repeat",
                       cfg.phase_spread, candidates.size, cfg.n_sensors)
    return rng.choice(candidates, size=cfg.n_sensors, replace=replace).astype(np.int64)


def draw_coupling(cfg: SynthConfig, edges: Sequence[Edge], index: Dict[str, int],
                  rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(src, dst, lag, gain) arrays per directed non-self edge; incoming gains capped per sensor."""
    links = [(index[e.src], index[e.dst]) for e in edges if e.src != e.dst]
    src = np.array([s for s, _ in links], dtype=np.int64)
    dst = np.array([d for _, d in links], dtype=np.int64)
    lo, hi = cfg.lag_range
    lag = rng.integers(lo, hi + 1, size=len(links))
    glo, ghi = cfg.gain_range
    gain = rng.uniform(glo, ghi, size=len(links)) if ghi > glo else np.full(len(links), float(glo))

    incoming = np.bincount(dst, weights=gain, minlength=cfg.n_sensors) if len(links) else np.zeros(cfg.n_sensors)
    scale = np.where(incoming > MAX_INCOMING_GAIN, MAX_INCOMING_GAIN / np.maximum(incoming, 1e-12), 1.0)
    if len(links):
        gain = gain * scale[dst]
    return src, dst, lag, gain


def _couple(dev: np.ndarray, src: np.ndarray, dst: np.ndarray, lag: np.ndarray, gain: np.ndarray) -> np.ndarray:
    """y_s(t) = dev_s(t) + sum_{u->s} gain * y_u(t - lag), sequential in t."""
    if src.size == 0 or not np.any(gain):
        return dev
    n, k = dev.shape
    y = np.array(dev, copy=True)
    for t in range(1, k):
        back = t - lag
        ok = back >= 0
        if not ok.any():
            continue
        contrib = np.zeros(n)
        np.add.at(contrib, dst[ok], gain[ok] * y[src[ok], back[ok]])
        y[:, t] += contrib
    return y


def generate_traffic(cfg: SynthConfig, edges: Sequence[Edge]) -> TrafficDataset:
    """
    Readings for every sensor at 5-minute resolution over cfg.days days.

      dev_s(t) = sign * amplitude * w(t) * daily(t + phase_s)
      y_s(t)   = dev_s(t) + sum_{u->s} gain_us * y_u(t - lag_us)
      x_s(t)   = base + y_s(t) + noise
    Only deviations travel along edges; upstream base levels do not.
    sign is -1 for speed (congestion lowers speed), +1 for flow; w(t) is
    weekend_factor on Saturdays and Sundays, 1 otherwise. Values floor at 0.
    """
    cfg.validate()
    n, k = cfg.n_sensors, cfg.days * STEPS_PER_DAY
    ids = sensor_ids_for(n)
    index = {s: i for i, s in enumerate(ids)}
    for e in edges:
        if e.src not in index or e.dst not in index:
            raise ConfigError(f"edge {e.src}->{e.dst} names a sensor outside 0..{n - 1}")

    rng = np.random.default_rng(derive_seed(cfg.seed, "traffic"))
    timestamps = cfg.start_timestamp + STEP_SECONDS * np.arange(k, dtype=np.int64)

    phases = draw_phases(cfg, rng)
    profile = daily_profile()
    slot = np.arange(k) % STEPS_PER_DAY
    shaped = profile[(slot[None, :] + phases[:, None]) % STEPS_PER_DAY]       # [N, K]

    weekend = day_class(timestamps) == "weekend"
    weight = np.where(weekend, cfg.weekend_factor, 1.0)
    sign = -1.0 if cfg.metric_kind == "speed" else 1.0
    dev = sign * cfg.amplitude * weight[None, :] * shaped

    src, dst, lag, gain = draw_coupling(cfg, edges, index, rng)
    metric = cfg.base_level + _couple(dev, src, dst, lag, gain)
    if cfg.noise_std > 0:
        metric = metric + rng.normal(0.0, cfg.noise_std, size=metric.shape)
    metric = np.maximum(metric, 0.0)

    tod = np.broadcast_to(time_of_day(timestamps), (n, k))
    channels = [metric, tod]
    names = [cfg.metric_kind, "tod"]
    if cfg.emit_flow:
        if cfg.metric_kind == "speed":
            flow = np.maximum(cfg.flow_base + cfg.flow_gain * (cfg.base_level - metric), 0.0)
            channels.append(flow)
            names.append("flow")
        else:
            logger.warning("emit_flow ignored: the metric channel is already flow")

    logger.info("generated %d sensors x %d steps (%s topology, %d edges)", n, k, cfg.topology, len(edges))
    return TrafficDataset(
        values=np.stack(channels, axis=0),
        timestamps=timestamps,
        edges=tuple(edges),
        sensor_ids=ids,
        metric_kind=cfg.metric_kind,
        coords=sensor_layout(cfg),
        channel_names=tuple(names),
    )


def synth_manifest(cfg: SynthConfig, extra: Optional[Dict] = None) -> Dict:
    """Generator settings echoed next to the written dataset."""
    out = {"generator": "synthetic", "synth": dataclasses.asdict(cfg)}
    out.update(extra or {})
    return out
