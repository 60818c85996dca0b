# src/load/checkpoint.py
"""
Model checkpoints as JSON.

A checkpoint holds everything needed to forecast again without the
training run: model config, every parameter (name, shape, values),
batch-norm running statistics, the fitted scaler and the sensor ids it
was trained on. Floats go through repr, so save -> load is bit-exact.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from src.config import ModelConfig
from src.diffcore.ops import BatchNormState
from src.errors import ConfigError
from src.load.to_disk import write_json
from src.model.gswan import ModelParams
from src.transform.clean import Scaler

CHECKPOINT_VERSION = 1


def _array_record(a: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(a.shape), "values": np.asarray(a, dtype=np.float64).reshape(-1).tolist()}


def _array_from(rec: Dict[str, Any]) -> np.ndarray:
    return np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])


def save_checkpoint(path: Path | str, params: ModelParams, scaler: Scaler, sensor_ids: Sequence[str],
                    extra: Optional[Dict[str, Any]] = None) -> Path:
    cfg = dataclasses.asdict(params.config)
    cfg["dilations"] = list(cfg["dilations"])
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": cfg,
        "n_sensors": params.n_sensors,
        "sensor_ids": list(sensor_ids),
        "parameters": [{"name": k, **_array_record(v)} for k, v in sorted(params.weights.items())],
        "batch_norm": {
            k: {
                "running_mean": _array_record(s.running_mean),
                "running_var": _array_record(s.running_var),
                "momentum": s.momentum,
                "eps": s.eps,
            }
            for k, s in sorted(params.bn.items())
        },
        "scaler": scaler.to_dict(),
        "extra": extra or {},
    }
    return write_json(payload, path)


def load_checkpoint(path: Path | str) -> Tuple[ModelParams, Scaler, Tuple[str, ...], Dict[str, Any]]:
    """Returns (params, scaler, sensor ids, extra)."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {p}")
    try:
        raw = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not a checkpoint ({exc.msg})") from None
    if raw.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{p}: unsupported checkpoint version {raw.get('version')!r}")

    cfg_raw = dict(raw["config"])
    cfg_raw["dilations"] = tuple(cfg_raw["dilations"])
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    cfg = ModelConfig(**{k: v for k, v in cfg_raw.items() if k in known}).validate()

    weights = {rec["name"]: _array_from(rec) for rec in raw["parameters"]}
    bn = {
        k: BatchNormState(
            running_mean=_array_from(s["running_mean"]),
            running_var=_array_from(s["running_var"]),
            momentum=float(s["momentum"]),
            eps=float(s["eps"]),
        )
        for k, s in raw["batch_norm"].items()
    }
    params = ModelParams(config=cfg, n_sensors=int(raw["n_sensors"]), weights=weights, bn=bn)
    return params, Scaler.from_dict(raw["scaler"]), tuple(raw["sensor_ids"]), raw.get("extra", {})
