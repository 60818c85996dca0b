from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import pytest

from src.config import SynthConfig
from src.errors import DimensionError, ExportError
from src.evaluate.analysis import adjacency_similarity, kernel_features, probe_embeddings, r2_score, top_pairs
from src.evaluate.baselines import ha_baseline, persistence_baseline, persistence_on_split, time_slot
from src.evaluate.exporters import (
    export_adjacency, export_pair_association, export_scatter, pair_frame, scatter_frame,
)
from src.evaluate.metrics import compute_metrics, horizon_report, reports_frame
from src.extract.synthetic import generate_graph, generate_traffic
from src.model.gswan import NodeEmbeddings
from src.schema import TrafficDataset
from src.transform.features import make_windows, split_temporal, stack_windows, time_of_day

START = 1704067200  # Monday 00:00 UTC
DAY = 86400


def dataset_from(metric, start=START):
    metric = np.asarray(metric, dtype=np.float64)
    n, k = metric.shape
    stamps = start + 300 * np.arange(k, dtype=np.int64)
    return TrafficDataset(values=np.stack([metric, np.broadcast_to(time_of_day(stamps), (n, k))]),
                          timestamps=stamps, edges=(), sensor_ids=tuple(f"s{i}" for i in range(n)))


# ---------- metrics ----------

def test_metric_hand_values():
    m = compute_metrics(np.array([2.0, 4.0]), np.array([1.0, 5.0]))
    assert m.mae == 1.0
    assert m.rmse == 1.0
    assert m.mape == pytest.approx(37.5)


def test_mape_skips_zero_targets():
    assert compute_metrics(np.zeros(4), np.ones(4)).mape is None
    base = compute_metrics(np.array([2.0, 4.0]), np.array([1.0, 5.0]))
    padded = compute_metrics(np.array([2.0, 4.0, 0.0]), np.array([1.0, 5.0, 3.0]))
    assert padded.mape == pytest.approx(base.mape)
    assert padded.mae != base.mae


def test_metrics_shape_mismatch_and_empty():
    with pytest.raises(DimensionError):
        compute_metrics(np.zeros(3), np.zeros(4))
    empty = compute_metrics(np.zeros(0), np.zeros(0))
    assert np.isnan(empty.mae) and empty.mape is None


def test_metrics_match_streaming_oracle(rng):
    y = rng.uniform(-50.0, 100.0, size=1_000_000)
    h = y + rng.normal(0.0, 5.0, size=y.size)
    abs_sum = sq_sum = pct_sum = 0.0
    count = nonzero = 0
    for start in range(0, y.size, 4096):
        yc, hc = y[start:start + 4096], h[start:start + 4096]
        e = yc - hc
        abs_sum += float(np.abs(e).sum())
        sq_sum += float((e * e).sum())
        nz = yc != 0
        pct_sum += float(np.abs(e[nz] / yc[nz]).sum())
        count += yc.size
        nonzero += int(nz.sum())
    m = compute_metrics(y, h)
    assert m.mae == pytest.approx(abs_sum / count, abs=1e-9)
    assert m.rmse == pytest.approx(np.sqrt(sq_sum / count), abs=1e-9)
    assert m.mape == pytest.approx(100.0 * pct_sum / nonzero, rel=1e-9)


def test_horizon_report_rows_and_average(rng):
    y = rng.uniform(20.0, 70.0, size=(5, 12, 3))
    h = y + rng.normal(size=y.shape)
    report = horizon_report(y, h, "speed")
    frame = report.to_frame()
    assert len(frame) == 16
    assert frame["row"].tolist()[-4:] == ["15min", "30min", "60min", "avg"]
    assert report.aggregates["30min"] == report.per_step[5]
    assert report.average.mae == pytest.approx(np.mean([m.mae for m in report.per_step]), abs=1e-12)
    assert report.highlights() == ["15min", "30min", "60min"]
    assert horizon_report(y, h, "flow").highlights() == ["avg"]
    assert any(line.startswith("60min") and "*" in line for line in report.to_text().splitlines())


def test_identical_step_errors_give_flat_average():
    y = np.zeros((2, 12, 2)) + 10.0
    h = y + 2.0
    report = horizon_report(y, h)
    assert all(m.mae == 2.0 for m in report.per_step)
    assert report.average.mae == 2.0


def test_reports_frame_stacks_methods(rng):
    y = rng.uniform(1.0, 2.0, size=(2, 12, 2))
    frame = reports_frame([horizon_report(y, y, method="HA"), horizon_report(y, y + 1, method="G-SWaN")])
    assert frame.groupby("method").size().to_dict() == {"G-SWaN": 16, "HA": 16}


# ---------- baselines ----------

def test_time_slot():
    assert time_slot(np.array([START, START + 299, START + 300, START + DAY - 1])).tolist() == [0, 0, 1, 287]
    assert time_slot(np.array([START]), utc_offset_seconds=-3600)[0] == 276


def test_ha_averages_same_slot_across_days():
    metric = np.concatenate([np.full(288, 10.0), np.full(288, 14.0)])[None, :]
    train = dataset_from(metric)
    target = np.array([[START + 3 * DAY + 300 * 7, START + 3 * DAY + 300 * 8]])
    pred = ha_baseline(train, target)
    assert pred.shape == (1, 2, 1)
    assert np.all(pred == 12.0)


def test_ha_prediction_depends_only_on_target_time():
    metric = np.tile(np.arange(288, dtype=float), 2)[None, :]
    train = dataset_from(metric)
    # the same timestamp forecast as step 1 of one window and step 3 of another
    ts = START + 2 * DAY + 300 * 50
    pred = ha_baseline(train, np.array([[ts, ts + 300, ts + 600], [ts - 600, ts - 300, ts]]))
    assert pred[0, 0, 0] == pred[1, 2, 0] == 50.0
    # one window's steps land in consecutive slots, so the horizon is not flat
    assert pred[0, :, 0].tolist() == [50.0, 51.0, 52.0]
    assert pred[1, :, 0].tolist() == [48.0, 49.0, 50.0]


def test_ha_fallback_for_uncovered_slots(caplog):
    train = dataset_from(np.array([[1.0, 2.0, 3.0]]))
    with caplog.at_level(logging.WARNING):
        pred = ha_baseline(train, np.array([[START + 300 * 100]]))
    assert pred[0, 0, 0] == pytest.approx(2.0)
    assert "no training data" in caplog.text


def test_ha_exact_on_periodic_synthetic_data():
    cfg = SynthConfig(n_sensors=4, days=10, noise_std=0.0, gain_range=(0.0, 0.0),
                      phase_spread=0.0, weekend_factor=1.0, seed=3)
    d = generate_traffic(cfg, generate_graph(cfg))
    views = split_temporal(d, (7, 1, 2))
    windows = make_windows(views.test)
    _, y = stack_windows(windows)
    origins = np.array([w.origin for w in windows])
    stamps = views.test.timestamps[origins[:, None] + 12 + np.arange(12)[None, :]]
    pred = ha_baseline(views.train, stamps)
    assert compute_metrics(y, pred).mae == 0.0


def test_persistence_on_ramp():
    ramp = np.arange(30, dtype=float)[None, :]
    d = dataset_from(ramp)
    windows = make_windows(d)
    _, y = stack_windows(windows)
    pred = persistence_on_split(d)
    assert pred.shape == y.shape
    assert horizon_report(y, pred).average.mae == pytest.approx(6.5, abs=1e-9)
    np.testing.assert_array_equal(pred[0, :, 0], 11.0)


def test_persistence_rejects_wrong_rank():
    with pytest.raises(DimensionError):
        persistence_baseline(np.zeros((2, 3)), 12)


# ---------- embedding probe / similarity ----------

def test_probe_recovers_planted_linear_map(rng):
    e1, e2 = rng.normal(size=(60, 4)), rng.normal(size=(60, 4))
    m = rng.normal(size=(8, 2))
    coords = np.hstack([e1, e2]) @ m + np.array([-118.0, 34.0])
    result = probe_embeddings(NodeEmbeddings(e1, e2), coords)
    assert result.r2_linear > 0.999
    assert result.n_samples == 60
    assert result.kernel.n_features == 32
    assert not result.linear.rank_deficient


def test_probe_on_unrelated_embeddings_scores_low(rng):
    e = NodeEmbeddings(rng.normal(size=(325, 10)), rng.normal(size=(325, 10)))
    coords = rng.normal(size=(325, 2))
    assert probe_embeddings(e, coords, use_kernels=False).r2_linear < 0.3


def test_probe_constant_coords_and_small_samples(rng, caplog):
    e = NodeEmbeddings(rng.normal(size=(5, 10)), rng.normal(size=(5, 10)))
    with caplog.at_level(logging.WARNING):
        result = probe_embeddings(e, np.ones((5, 2)), use_kernels=False)
    assert result.r2_linear == 0.0
    assert result.linear.rank_deficient
    assert "rank deficient" in caplog.text
    assert result.to_dict()["kernel"] is None


def test_probe_rejects_mismatched_coords(rng):
    e = NodeEmbeddings(rng.normal(size=(5, 2)), rng.normal(size=(5, 2)))
    with pytest.raises(DimensionError):
        probe_embeddings(e, np.zeros((4, 2)))


def test_kernel_features_clip_tan():
    feats = kernel_features(np.array([[np.pi / 2, 0.0]]))
    assert feats.shape == (1, 8)
    assert feats[0, 6] == 1e3
    assert feats[0, 5] == 1.0     # cos 0


def test_r2_score_constant_target():
    assert r2_score(np.full(4, 3.0), np.arange(4.0)) == 0.0
    assert r2_score(np.arange(4.0), np.arange(4.0)) == 1.0


def test_adjacency_similarity_values(rng):
    a = rng.random((5, 5))
    assert adjacency_similarity(a, a) == pytest.approx(1.0, abs=1e-12)
    assert adjacency_similarity(a, 3.0 * a) == pytest.approx(1.0, abs=1e-12)
    assert adjacency_similarity(np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])) == 0.0
    assert adjacency_similarity(np.zeros((2, 2)), np.eye(2)) is None

    x = np.array([[1.0, 2.0], [0.0, 1.0]])
    y = np.array([[2.0, 0.0], [1.0, 1.0]])
    assert adjacency_similarity(x, y) == pytest.approx(3.0 / (np.sqrt(6.0) * np.sqrt(6.0)), abs=1e-12)
    with pytest.raises(DimensionError):
        adjacency_similarity(np.eye(2), np.eye(3))


def test_top_pairs_skip_diagonal():
    a = np.array([[9.0, 0.2, 0.7], [0.1, 9.0, 0.5], [0.3, 0.4, 9.0]])
    pairs = top_pairs(a, ["a", "b", "c"], k=2)
    assert pairs == [("a", "c", 0.7), ("b", "c", 0.5)]


# ---------- exporters ----------

@pytest.fixture
def flow_dataset():
    cfg = SynthConfig(n_sensors=3, days=7, emit_flow=True, seed=8)
    return generate_traffic(cfg, generate_graph(cfg))


def test_scatter_export(flow_dataset, tmp_path):
    out = tmp_path / "scatter.csv"
    rows = export_scatter(flow_dataset, "s1", "flow", "speed", out)
    assert rows == flow_dataset.n_timesteps
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["timestamp", "x", "y"]
    assert frame["x"].corr(frame["y"]) < -0.9


def test_scatter_unknown_names(flow_dataset):
    with pytest.raises(ExportError, match="zz"):
        scatter_frame(flow_dataset, "zz", "flow", "speed")
    with pytest.raises(ExportError, match="occupancy"):
        scatter_frame(flow_dataset, "s0", "occupancy", "speed")


def test_pair_export_day_classes(flow_dataset, tmp_path):
    frame = pair_frame(flow_dataset, "s0", "s2", (5 * 288 - 2, 5 * 288 + 2))
    assert len(frame) == 4
    # Friday 23:50, 23:55 then Saturday 00:00, 00:05
    assert frame["day_class"].tolist() == ["weekday", "weekday", "weekend", "weekend"]
    np.testing.assert_array_equal(frame["value_j"], flow_dataset.metric[2, 5 * 288 - 2:5 * 288 + 2])

    out = tmp_path / "pair.csv"
    assert export_pair_association(flow_dataset, "s0", "s2", (0, 288), out) == 288


def test_pair_export_empty_range_writes_header(flow_dataset, tmp_path):
    out = tmp_path / "empty.csv"
    assert export_pair_association(flow_dataset, "s0", "s1", (10, 10), out) == 0
    assert out.read_text(encoding="utf-8") == "timestamp,value_i,value_j,day_class\n"


def test_adjacency_export(tmp_path):
    out = tmp_path / "adj.csv"
    export_adjacency(np.array([[1.0, 0.5], [0.0, 1.0]]), ["a", "b"], out)
    frame = pd.read_csv(out, index_col="sensor")
    assert list(frame.columns) == ["a", "b"]
    assert frame.loc["a", "b"] == 0.5
