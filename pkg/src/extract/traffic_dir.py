# src/extract/traffic_dir.py
"""
Reader for the traffic dataset directory format.

A dataset directory holds:
  - values.csv : K rows x N columns, header = sensor ids, empty/NaN cell = missing
  - edges.csv  : src,dst,distance (one directed edge per row)
  - meta.json  : metric_kind, start_timestamp, step_seconds (=300),
                 optional coords {id: [lon, lat]}, utc_offset_seconds, extra_channels
  - <name>.csv : optional extra metric channels listed in meta.extra_channels,
                 same layout as values.csv

Line numbers in errors are 1-based file lines (the header is line 1).
"""

from __future__ import annotations

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.errors import DatasetFormatError
from src.schema import STEP_SECONDS, Edge, TrafficDataset
from src.transform.features import time_of_day

logger = logging.getLogger(__name__)

# Candidate header names for the edge list (exported graphs name these differently)
SRC_CANDS = ["src", "source", "from"]
DST_CANDS = ["dst", "target", "to"]
DIST_CANDS = ["distance", "cost", "dist", "weight"]

# Cells that count as missing besides the empty string
MISSING_TOKENS = {"", "nan", "NaN", "NAN"}

METRIC_KINDS = ("speed", "flow")


def _pick(candidates: List[str], columns: List[str]) -> Optional[str]:
    """First candidate name present in `columns`, or None."""
    for c in candidates:
        if c in columns:
            return c
    return None


def _read_text_table(path: Path) -> pd.DataFrame:
    """
    Read a CSV as raw strings so we can tell an empty cell from a short row.

    With keep_default_na=False an empty cell stays "", while a row with too
    few fields gets NaN padding; a row with too many fields makes the parser fail.
    """
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[], skip_blank_lines=True)
    except pd.errors.ParserError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise DatasetFormatError(path, int(m.group(1)) if m else None, f"ragged row: {exc}") from None
    except pd.errors.EmptyDataError:
        raise DatasetFormatError(path, 1, "file is empty") from None


def _read_matrix(path: Path, expected_ids: Optional[Sequence[str]] = None) -> Tuple[List[str], np.ndarray]:
    """
    Parse a values-style CSV into (sensor ids, [K, N] float64 with NaN for missing).
    """
    if not path.is_file():
        raise DatasetFormatError(path, None, "file not found")
    raw = _read_text_table(path)
    ids = [str(c).strip() for c in raw.columns]

    if len(set(ids)) != len(ids):
        raise DatasetFormatError(path, 1, "duplicate sensor id in header")
    if expected_ids is not None and list(ids) != list(expected_ids):
        raise DatasetFormatError(path, 1, "header does not match the sensor ids of values.csv")

    # Short rows were padded with NaN by the parser
    short = raw.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        raise DatasetFormatError(path, row + 2, f"ragged row: expected {len(ids)} fields")

    cells = raw.apply(lambda col: col.str.strip())
    missing = cells.isin(MISSING_TOKENS)

    # Convert everything else; float() parsing is correctly rounded, so a
    # repr-written file reads back bit-exact
    try:
        values = cells.where(~missing, "nan").astype(np.float64).to_numpy()
    except ValueError:
        coerced = cells.apply(lambda col: pd.to_numeric(col, errors="coerce"))
        bad = coerced.isna().to_numpy() & ~missing.to_numpy()
        r, c = np.argwhere(bad)[0]
        raise DatasetFormatError(path, int(r) + 2, f"non-numeric value {cells.iat[r, c]!r} for sensor {ids[c]}") from None

    return ids, values


def _read_edges(path: Path, ids: Sequence[str]) -> List[Edge]:
    if not path.is_file():
        raise DatasetFormatError(path, None, "file not found")
    raw = _read_text_table(path)
    cols = [str(c).strip().lower() for c in raw.columns]
    raw.columns = cols

    src_col, dst_col, dist_col = _pick(SRC_CANDS, cols), _pick(DST_CANDS, cols), _pick(DIST_CANDS, cols)
    if not (src_col and dst_col and dist_col):
        raise DatasetFormatError(path, 1, f"expected header src,dst,distance; found {cols}")

    known = set(ids)
    edges: List[Edge] = []
    for i, row in enumerate(raw.itertuples(index=False)):
        line = i + 2
        rec = row._asdict()
        src, dst = str(rec[src_col]).strip(), str(rec[dst_col]).strip()
        for sensor in (src, dst):
            if sensor not in known:
                raise DatasetFormatError(path, line, f"unknown sensor {sensor!r}")
        try:
            distance = float(str(rec[dist_col]).strip())
        except ValueError:
            raise DatasetFormatError(path, line, f"bad distance {rec[dist_col]!r}") from None
        if not np.isfinite(distance) or distance < 0:
            raise DatasetFormatError(path, line, f"distance must be finite and >= 0, got {distance}")
        edges.append(Edge(src, dst, distance))
    return edges


def _read_meta(path: Path) -> Dict:
    if not path.is_file():
        raise DatasetFormatError(path, None, "file not found")
    try:
        meta = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None

    kind = meta.get("metric_kind")
    if kind not in METRIC_KINDS:
        raise DatasetFormatError(path, None, f"metric_kind must be one of {METRIC_KINDS}, got {kind!r}")
    step = meta.get("step_seconds", STEP_SECONDS)
    if not isinstance(step, (int, float)) or step <= 0:
        raise DatasetFormatError(path, None, f"step_seconds must be positive, got {step!r}")
    if int(step) != STEP_SECONDS:
        raise DatasetFormatError(path, None, f"step_seconds must be {STEP_SECONDS}, got {step}")
    if "start_timestamp" not in meta:
        raise DatasetFormatError(path, None, "missing start_timestamp")
    return meta


def load_dataset(path: Path | str) -> TrafficDataset:
    """
    Load a dataset directory into a TrafficDataset.

    Returns values shaped [D_input, N, K]: channel 0 = metric, channel 1 =
    time-of-day fraction derived from the timestamps, then any extra channels.
    Missing metric cells stay NaN for later imputation.
    """
    root = Path(path)
    if not root.is_dir():
        raise DatasetFormatError(root, None, "dataset directory not found")

    meta = _read_meta(root / "meta.json")
    ids, metric = _read_matrix(root / "values.csv")
    edges = _read_edges(root / "edges.csv", ids)

    n_steps = metric.shape[0]
    start = int(meta["start_timestamp"])
    offset = int(meta.get("utc_offset_seconds", 0))
    timestamps = start + STEP_SECONDS * np.arange(n_steps, dtype=np.int64)

    # Time-of-day channel, same value for every sensor
    tod = np.broadcast_to(time_of_day(timestamps, offset), (len(ids), n_steps))

    channels = [metric.T, tod]
    names = [meta["metric_kind"], "tod"]
    for extra in meta.get("extra_channels", []) or []:
        _, mat = _read_matrix(root / f"{extra}.csv", expected_ids=ids)
        if mat.shape[0] != n_steps:
            raise DatasetFormatError(root / f"{extra}.csv", None,
                                     f"has {mat.shape[0]} rows, values.csv has {n_steps}")
        channels.append(mat.T)
        names.append(str(extra))

    coords = None
    raw_coords = meta.get("coords")
    if raw_coords:
        absent = [s for s in ids if s not in raw_coords]
        if absent:
            raise DatasetFormatError(root / "meta.json", None, f"coords missing for sensors {absent[:5]}")
        coords = np.array([[float(v) for v in raw_coords[s]] for s in ids], dtype=np.float64)

    values = np.stack(channels, axis=0)
    logger.info("loaded %s: %d sensors, %d timesteps, %d edges, %d missing cells",
                root, len(ids), n_steps, len(edges), int(np.isnan(metric).sum()))

    return TrafficDataset(
        values=values,
        timestamps=timestamps,
        edges=tuple(edges),
        sensor_ids=tuple(ids),
        metric_kind=meta["metric_kind"],
        coords=coords,
        channel_names=tuple(names),
        utc_offset_seconds=offset,
    )
