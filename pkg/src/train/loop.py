# src/train/loop.py
"""
Data preparation and the optimization loop.

Flow per epoch:
  shuffle train windows (seeded) -> batch -> augment -> forward (train mode)
  -> MAE in original units -> backward -> clip -> AdamW step
  -> validation metrics in eval mode without augmentation

The model, predictor and augmenter are looked up through their modules at
call time so a caller can swap them (the tests capture the flags this way).
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import AugmentConfig, TrainConfig, derive_seed
from src.diffcore.graph import backward
from src.errors import TrainingDiverged
from src.evaluate.metrics import compute_metrics
from src.model import gswan
from src.model.gswan import ModelParams
from src.schema import SplitViews, TrafficDataset
from src.train import optim
from src.transform import augment
from src.transform.clean import Scaler, apply_scaler, fit_scaler, impute_missing
from src.transform.features import build_adjacency, make_windows, split_temporal, stack_windows

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "val_mae", "val_mape", "val_rmse", "lr", "seconds"]


# ---------- prepared splits ----------

@dataclass
class SplitArrays:
    """Model-ready arrays of one split."""
    x: np.ndarray             # [B, 2, N, L] standardized metric + MinMax time-of-day
    y: np.ndarray             # [B, F, N] original units, imputed
    origins: np.ndarray       # [B] window start index within the split
    timestamps: np.ndarray    # [K_split] epoch seconds of the split

    @property
    def size(self) -> int:
        return int(self.x.shape[0])

    def target_timestamps(self, input_length: int, horizon: int) -> np.ndarray:
        """[B, F] timestamp of every target step."""
        idx = self.origins[:, None] + input_length + np.arange(horizon)[None, :]
        return self.timestamps[idx]


@dataclass
class PreparedData:
    dataset: TrafficDataset        # imputed, original units
    splits: SplitViews             # views of `dataset`
    scaler: Scaler
    a_r: np.ndarray
    sigma_d: float
    train: SplitArrays
    val: SplitArrays
    test: SplitArrays
    input_length: int = 12
    horizon: int = 12

    @property
    def n_sensors(self) -> int:
        return self.dataset.n_sensors

    def split(self, name: str) -> SplitArrays:
        if name not in ("train", "val", "test"):
            raise KeyError(f"split must be train|val|test, got {name!r}")
        return getattr(self, name)


def _arrays(raw: TrafficDataset, scaled: TrafficDataset, L: int, F: int) -> SplitArrays:
    x, _ = stack_windows(make_windows(scaled, L, F), channels=(0, 1))
    windows = make_windows(raw, L, F)
    _, y = stack_windows(windows, channels=(0,))
    origins = np.array([w.origin for w in windows], dtype=np.int64)
    return SplitArrays(x=x, y=y, origins=origins, timestamps=np.asarray(raw.timestamps))


def prepare_data(d: TrafficDataset, ratio: Sequence[int | float] = (7, 1, 2), L: int = 12, F: int = 12,
                 scaler: Optional[Scaler] = None) -> PreparedData:
    """
    Split, fit the scaler on train only, impute with training means, scale, window.

    Pass `scaler` to reuse a fitted one (e.g. the scaler stored in a checkpoint).
    """
    first = split_temporal(d, ratio, L, F)
    if scaler is None:
        scaler = fit_scaler(first.train)

    imputed = impute_missing(d, scaler)
    views = split_temporal(imputed, ratio, L, F)
    adj = build_adjacency(imputed.edges, imputed.n_sensors, imputed.sensor_ids)

    parts = {}
    for name in ("train", "val", "test"):
        raw = getattr(views, name)
        parts[name] = _arrays(raw, apply_scaler(scaler, raw), L, F)

    logger.info("prepared windows: train=%d val=%d test=%d (sigma_d=%.4f)",
                parts["train"].size, parts["val"].size, parts["test"].size, adj.sigma_d)
    return PreparedData(
        dataset=imputed, splits=views, scaler=scaler, a_r=adj.a_r, sigma_d=adj.sigma_d,
        train=parts["train"], val=parts["val"], test=parts["test"], input_length=L, horizon=F,
    )


# ---------- history ----------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mae: float
    val_mape: Optional[float]
    val_rmse: float
    lr: float
    seconds: Optional[float] = None


@dataclass
class TrainHistory:
    records: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None

    def __len__(self) -> int:
        return len(self.records)

    def append(self, rec: EpochRecord) -> None:
        self.records.append(rec)

    def to_frame(self) -> pd.DataFrame:
        rows = [vars(r).copy() for r in self.records]
        return pd.DataFrame(rows, columns=HISTORY_COLUMNS)


# ---------- prediction ----------

def _eval_chunk(params: ModelParams, x: np.ndarray, a_r: np.ndarray) -> np.ndarray:
    return gswan.forward(params, x, a_r, mode="eval").output.value


def predict_split(params: ModelParams, x: np.ndarray, a_r: np.ndarray, scaler: Scaler,
                  batch_size: int = 256, threads: int = 1) -> np.ndarray:
    """
    Eval-mode forecasts [B, F, N] in original units.

    Batches are fixed-size; with threads > 1 they are evaluated in a pool with
    an order-preserving map, so the result does not depend on the thread count.
    """
    if x.shape[0] == 0:
        return np.zeros((0, params.config.horizon, params.n_sensors))
    chunks = [x[s:s + batch_size] for s in range(0, x.shape[0], batch_size)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(lambda c: _eval_chunk(params, c, a_r), chunks))
    else:
        outs = [_eval_chunk(params, c, a_r) for c in chunks]
    return scaler.inverse_metric(np.concatenate(outs, axis=0))


# ---------- training ----------

def _train_step(params: ModelParams, xb: np.ndarray, yb: np.ndarray, a_r: np.ndarray,
                scaler: Scaler, state: optim.AdamState, cfg: TrainConfig, lr: float) -> float:
    fp = gswan.forward(params, xb, a_r, mode="train")
    # loss in original units
    h = fp.output * scaler.metric_std + scaler.metric_mean
    loss = optim.mae_loss(h, fp.graph.constant(yb))
    value = float(loss.value)
    if not np.isfinite(value):
        raise TrainingDiverged(f"non-finite loss {value}", epoch=-1)

    grads = backward(fp.graph, loss)
    clipped, _ = optim.clip_gradients(grads, cfg.clip_norm)
    optim.adamw_step(params.weights, clipped, state, cfg, lr)
    return value


def train(params: ModelParams, data: PreparedData, train_cfg: TrainConfig,
          augment_cfg: Optional[AugmentConfig] = None, threads: int = 1,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> Tuple[ModelParams, TrainHistory]:
    """
    Train `params` in place and return (best parameters by validation MAE, history).

    Raises TrainingDiverged with `last_good` set to the best parameters seen so
    far (or the parameters at the start of the failing epoch).
    """
    augment_cfg = augment_cfg or AugmentConfig()
    history = TrainHistory()
    state = optim.AdamState.zeros_like(params.weights)
    best = params.copy()
    best_mae = np.inf

    tr = data.train
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        lr = optim.lr_at(epoch, train_cfg)
        epoch_start = params.copy()

        rng = np.random.default_rng(derive_seed(train_cfg.seed, f"shuffle/{epoch}"))
        order = rng.permutation(tr.size)
        aug_seed = derive_seed(augment_cfg.seed, f"augment/{epoch}")

        total, seen = 0.0, 0
        try:
            for s in range(0, tr.size, train_cfg.batch_size):
                idx = order[s:s + train_cfg.batch_size]
                xb, yb = tr.x[idx], tr.y[idx]
                if train_cfg.augment:
                    xb = augment.augment_batch(xb, augment_cfg, aug_seed, idx)
                loss = _train_step(params, xb, yb, data.a_r, data.scaler, state, train_cfg, lr)
                total += loss * len(idx)
                seen += len(idx)
        except TrainingDiverged as exc:
            last_good = best if history.best_epoch is not None else epoch_start
            logger.error("training diverged at epoch %d: %s", epoch, exc)
            raise TrainingDiverged(str(exc), epoch=epoch, last_good=last_good, history=history) from exc

        train_loss = total / max(seen, 1)
        pred = predict_split(params, data.val.x, data.a_r, data.scaler, train_cfg.eval_batch_size, threads)
        m = compute_metrics(data.val.y, pred)
        if not np.isfinite(m.mae):
            raise TrainingDiverged(f"non-finite validation MAE at epoch {epoch}", epoch=epoch,
                                   last_good=best if history.best_epoch is not None else epoch_start,
                                   history=history)

        rec = EpochRecord(
            epoch=epoch, train_loss=train_loss, val_mae=m.mae, val_mape=m.mape, val_rmse=m.rmse, lr=lr,
            seconds=round(time.perf_counter() - started, 3) if train_cfg.record_timing else None,
        )
        history.append(rec)
        if m.mae < best_mae:
            best_mae = m.mae
            best = params.copy()
            history.best_epoch = epoch

        logger.info("epoch %d: train_loss=%.4f val_mae=%.4f lr=%.6g", epoch, train_loss, m.mae, lr)
        if on_epoch is not None:
            on_epoch(rec)

    return best, history


def evaluate_split(params: ModelParams, data: PreparedData, split: str = "test",
                   batch_size: int = 256, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """(targets, forecasts), both [B, F, N] in original units."""
    arr = data.split(split)
    return arr.y, predict_split(params, arr.x, data.a_r, data.scaler, batch_size, threads)


def train_loss_of(params: ModelParams, data: PreparedData, batch_size: int = 256) -> float:
    """Eval-mode MAE over the training windows, without augmentation."""
    pred = predict_split(params, data.train.x, data.a_r, data.scaler, batch_size)
    return optim.mae_loss(pred, data.train.y)


__all__ = [
    "PreparedData", "SplitArrays", "EpochRecord", "TrainHistory", "HISTORY_COLUMNS",
    "prepare_data", "predict_split", "train", "evaluate_split", "train_loss_of",
]
