"""
File writers for datasets, reports and analysis artifacts.

Features
--------
- Every file is written to a uniquely named temp file next to its target,
  then moved into place with os.replace, so readers never see partial files.
- Floats are written with Python's shortest round-trip repr, so a dataset
  written here reloads bit-exact through load_dataset.
- Missing readings (NaN) are written as empty cells.

Usage
-----
from src.load.to_disk import write_dataset, write_frame
write_dataset(ds, "data/toy", manifest={"synth.seed": 7})
write_frame(report.to_frame(), "runs/toy/metrics.csv")
"""

from __future__ import annotations

import json
import logging
import os
import uuid
from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional

import numpy as np
import pandas as pd

from src.errors import ExportError
from src.schema import TrafficDataset

logger = logging.getLogger(__name__)


# ---------- staging helpers ----------

def _staged_write(path: Path | str, writer: Callable[[Path], None]) -> Path:
    """
    Write through a temp file and rename it over `path`.

    The temp name is random to avoid collisions between concurrent writers.
    Parent directories are created; an unwritable location raises ExportError.
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"cannot create directory {target.parent}: {exc}") from exc

    tmp = target.with_name(f".{target.name}.{uuid.uuid4().hex[:8]}.tmp")
    try:
        writer(tmp)
        os.replace(tmp, target)
    except OSError as exc:
        raise ExportError(f"cannot write {target}: {exc}") from exc
    finally:
        # Leftover staging file after a failure
        if tmp.exists():
            tmp.unlink()
    return target


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ---------- Main API ----------

def write_frame(df: pd.DataFrame, path: Path | str, index: bool = False) -> int:
    """
    Write a DataFrame as CSV.

    Parameters
    ----------
    df : pandas.DataFrame
        Rows to write; an empty frame still gets its header line.
    path : str | Path
        Target file.
    index : bool
        Whether to write the index as the first column.

    Returns
    -------
    int
        Number of data rows written.
    """
    _staged_write(path, lambda tmp: df.to_csv(tmp, index=index, na_rep="", lineterminator="\n"))
    return len(df)


def write_json(obj: Any, path: Path | str) -> Path:
    """Pretty JSON with sorted keys (stable bytes for identical content)."""
    text = json.dumps(obj, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
    return _staged_write(path, lambda tmp: tmp.write_text(text + "\n", encoding="utf-8"))


def write_text(text: str, path: Path | str) -> Path:
    return _staged_write(path, lambda tmp: tmp.write_text(text, encoding="utf-8"))


def _channel_frame(d: TrafficDataset, channel: int) -> pd.DataFrame:
    # [N, K] -> K rows x N columns
    return pd.DataFrame(np.asarray(d.values[channel]).T, columns=list(d.sensor_ids))


def write_dataset(d: TrafficDataset, path: Path | str, manifest: Optional[Mapping[str, Any]] = None) -> Dict[str, Path]:
    """
    Write a dataset directory in the format load_dataset reads.

    Files
    -----
    values.csv   channel 0, K rows x N columns, header = sensor ids
    edges.csv    src,dst,distance
    meta.json    metric_kind, start_timestamp, step_seconds, utc_offset_seconds,
                 coords (if any), extra_channels (channels after time-of-day)
    <name>.csv   one per extra channel
    manifest.json  only when `manifest` is given (e.g. the generator config)

    Returns
    -------
    dict
        File name -> written path.
    """
    root = Path(path)
    if d.n_timesteps == 0:
        raise ExportError("cannot write a dataset with no timesteps")

    written: Dict[str, Path] = {}
    write_frame(_channel_frame(d, 0), root / "values.csv")
    written["values.csv"] = root / "values.csv"

    edges = pd.DataFrame([tuple(e) for e in d.edges], columns=["src", "dst", "distance"])
    write_frame(edges, root / "edges.csv")
    written["edges.csv"] = root / "edges.csv"

    extras = list(d.channel_names[2:])
    for offset, name in enumerate(extras):
        write_frame(_channel_frame(d, 2 + offset), root / f"{name}.csv")
        written[f"{name}.csv"] = root / f"{name}.csv"

    meta: Dict[str, Any] = {
        "metric_kind": d.metric_kind,
        "start_timestamp": int(d.timestamps[0]),
        "step_seconds": int(d.step_seconds),
        "utc_offset_seconds": int(d.utc_offset_seconds),
    }
    if extras:
        meta["extra_channels"] = extras
    if d.coords is not None:
        meta["coords"] = {s: [float(v) for v in d.coords[i]] for i, s in enumerate(d.sensor_ids)}
    write_json(meta, root / "meta.json")
    written["meta.json"] = root / "meta.json"

    if manifest is not None:
        write_json(dict(manifest), root / "manifest.json")
        written["manifest.json"] = root / "manifest.json"

    logger.info("wrote dataset %s: %d sensors, %d timesteps, %d edges",
                root, d.n_sensors, d.n_timesteps, len(d.edges))
    return written
