# src/evaluate/metrics.py
"""
Forecast error metrics and horizon reports.

All inputs are in original dataset units. MAPE skips zero targets (flow
can be 0 at night) and is reported in percent; it is None when every
target is zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd

from src.errors import DimensionError

# 1-based horizon steps at 5-minute resolution
HORIZON_STEPS = {"15min": 3, "30min": 6, "60min": 12}


class Metrics(NamedTuple):
    mae: float
    mape: Optional[float]
    rmse: float


def compute_metrics(y: np.ndarray, h: np.ndarray) -> Metrics:
    """
    MAE = mean |y - h|, RMSE = sqrt(mean (y - h)^2),
    MAPE = 100 * mean |(y - h) / y| over entries with y != 0.
    """
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if y.shape != h.shape:
        raise DimensionError("compute_metrics", y.shape, h.shape)
    if y.size == 0:
        return Metrics(float("nan"), None, float("nan"))

    err = y - h
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))

    nonzero = y != 0
    mape = float(100.0 * np.mean(np.abs(err[nonzero] / y[nonzero]))) if nonzero.any() else None
    return Metrics(mae, mape, rmse)


@dataclass
class MetricsReport:
    """Per-step metrics for steps 1..F plus horizon aggregates and the F-step mean."""
    method: str
    metric_kind: str
    per_step: List[Metrics] = field(default_factory=list)
    aggregates: Dict[str, Metrics] = field(default_factory=dict)

    @property
    def average(self) -> Metrics:
        return self.aggregates["avg"]

    def to_frame(self) -> pd.DataFrame:
        """One row per step and per aggregate: method, row, step, mae, mape, rmse."""
        rows = []
        for i, m in enumerate(self.per_step, start=1):
            rows.append({"method": self.method, "row": f"step{i}", "step": i,
                         "mae": m.mae, "mape": m.mape, "rmse": m.rmse})
        for name, m in self.aggregates.items():
            step = HORIZON_STEPS.get(name, len(self.per_step))
            rows.append({"method": self.method, "row": name, "step": step,
                         "mae": m.mae, "mape": m.mape, "rmse": m.rmse})
        return pd.DataFrame(rows, columns=["method", "row", "step", "mae", "mape", "rmse"])

    def highlights(self) -> List[str]:
        """Speed datasets headline 15/30/60 min; flow datasets headline the 12-step average."""
        if self.metric_kind == "speed":
            return [k for k in HORIZON_STEPS if k in self.aggregates]
        return ["avg"]

    def to_text(self) -> str:
        """Aligned table (rows for every step, then aggregates)."""
        def fmt(v: Optional[float], pct: bool = False) -> str:
            if v is None or (isinstance(v, float) and np.isnan(v)):
                return "n/a"
            return f"{v:.2f}%" if pct else f"{v:.2f}"

        lines = [f"{self.method} ({self.metric_kind})",
                 f"{'row':<8}{'MAE':>10}{'MAPE':>10}{'RMSE':>10}"]
        for _, r in self.to_frame().iterrows():
            mark = "*" if r["row"] in self.highlights() else " "
            lines.append(f"{r['row']:<7}{mark}{fmt(r['mae']):>10}{fmt(r['mape'], True):>10}{fmt(r['rmse']):>10}")
        return "\n".join(lines)


def horizon_report(y: np.ndarray, h: np.ndarray, metric_kind: str = "speed", method: str = "G-SWaN") -> MetricsReport:
    """
    Per-step metrics on [B, F, N] arrays plus aggregates.

    Aggregates: steps 3/6/12 (15/30/60 min) and "avg", the mean of the
    per-step metrics across all F steps.
    """
    y = np.asarray(y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if y.shape != h.shape or y.ndim != 3:
        raise DimensionError("horizon_report", y.shape, h.shape, detail="expected [B, F, N]")

    steps = y.shape[1]
    per_step = [compute_metrics(y[:, f], h[:, f]) for f in range(steps)]
    report = MetricsReport(method=method, metric_kind=metric_kind, per_step=per_step)

    for name, step in HORIZON_STEPS.items():
        if step <= steps:
            report.aggregates[name] = per_step[step - 1]

    mapes = [m.mape for m in per_step if m.mape is not None]
    report.aggregates["avg"] = Metrics(
        mae=float(np.mean([m.mae for m in per_step])),
        mape=float(np.mean(mapes)) if mapes else None,
        rmse=float(np.mean([m.rmse for m in per_step])),
    )
    return report


def reports_frame(reports: Sequence[MetricsReport]) -> pd.DataFrame:
    """Stack several reports (model and baselines) into one table."""
    if not reports:
        return pd.DataFrame(columns=["method", "row", "step", "mae", "mape", "rmse"])
    return pd.concat([r.to_frame() for r in reports], ignore_index=True)
