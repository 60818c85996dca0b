from __future__ import annotations

import json

import pandas as pd
import pytest
from click.testing import CliRunner

import src.cli as cli_module
from src.cli import cli
from src.config import ModelConfig
from src.errors import TrainingDiverged
from src.load.checkpoint import load_checkpoint, save_checkpoint
from src.model.gswan import init_model

# Small network whose receptive field still covers the default 12-step input
TINY_RUN = "\n".join([
    "model.d_hidden=4",
    "model.d_skip=4",
    "model.n_layers=4",
    "model.dilations=1,2,4,4",
    "model.n_heads=1",
    "model.d_embed=2",
    "model.k_hops=1",
    "train.epochs=1",
    "train.batch_size=64",
]) + "\n"


def invoke(*args):
    return CliRunner().invoke(cli, [str(a) for a in args], catch_exceptions=False)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.env").write_text(TINY_RUN, encoding="utf-8")
    result = invoke("generate", "--sensors", 3, "--days", 2, "--seed", 7, "--emit-flow", "--out", root / "data")
    assert result.exit_code == 0, result.output
    result = invoke("train", "--config", root / "tiny.env", "--dataset", root / "data",
                    "--seed", 7, "--out", root / "run")
    assert result.exit_code == 0, result.output
    return root


# ---------- generate / inspect ----------

def test_generate_writes_a_week_of_rows(tmp_path):
    result = invoke("generate", "--sensors", 4, "--days", 7, "--seed", 3, "--out", tmp_path / "week")
    assert result.exit_code == 0, result.output
    assert "=== generate DONE ===" in result.output
    values = pd.read_csv(tmp_path / "week" / "values.csv")
    assert values.shape == (2016, 4)
    meta = json.loads((tmp_path / "week" / "meta.json").read_text())
    assert meta["step_seconds"] == 300
    assert (tmp_path / "week" / "resolved_config.env").is_file()


def test_generate_requires_out():
    result = CliRunner().invoke(cli, ["generate", "--sensors", "4"])
    assert result.exit_code == 2


def test_generate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert invoke("generate", "--sensors", 3, "--days", 1, "--seed", 11, "--out", tmp_path / name).exit_code == 0
    for f in ("values.csv", "edges.csv", "meta.json", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_bad_config_value_exits_2(tmp_path):
    cfg = tmp_path / "bad.env"
    cfg.write_text("model.n_heads=many\n", encoding="utf-8")
    result = CliRunner().invoke(cli, ["generate", "--config", str(cfg), "--out", str(tmp_path / "x")])
    assert result.exit_code == 2
    assert "model.n_heads" in result.output


def test_inspect_prints_summary(workspace, tmp_path):
    result = invoke("inspect", "--dataset", workspace / "data", "--preset", "METR-LA", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    assert "576" in result.output
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["summary"]["sensors"] == 3
    assert summary["channels"] == ["speed", "tod", "flow"]


def test_inspect_missing_dataset_exits_2(tmp_path):
    result = CliRunner().invoke(cli, ["inspect", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path)])
    assert result.exit_code == 2


# ---------- train ----------

def test_train_writes_artifacts(workspace):
    run = workspace / "run"
    for name in ("checkpoint_best.json", "checkpoint_final.json", "history.csv", "resolved_config.env"):
        assert (run / name).is_file(), name
    history = pd.read_csv(run / "history.csv")
    assert len(history) == 1
    assert history["seconds"].isna().all()


def test_resolved_config_reproduces_the_run(workspace, tmp_path):
    result = invoke("train", "--config", workspace / "run" / "resolved_config.env", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    first = pd.read_csv(workspace / "run" / "history.csv")
    again = pd.read_csv(tmp_path / "history.csv")
    pd.testing.assert_frame_equal(first, again)


def test_ablation_is_recorded(workspace, tmp_path):
    result = invoke("train", "--config", workspace / "tiny.env", "--dataset", workspace / "data",
                    "--ablation", "no-node-embeddings", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    snapshot = (tmp_path / "resolved_config.env").read_text()
    assert "model.use_node_embeddings=false" in snapshot


def test_divergence_exits_3_and_keeps_last_good(workspace, tmp_path, monkeypatch):
    def boom(params, data, *args, **kwargs):
        raise TrainingDiverged("non-finite loss nan", epoch=2, last_good=params.copy())

    monkeypatch.setattr(cli_module, "train", boom)
    result = CliRunner().invoke(cli, ["train", "--config", str(workspace / "tiny.env"),
                                      "--dataset", str(workspace / "data"), "--out", str(tmp_path)])
    assert result.exit_code == 3
    assert (tmp_path / "checkpoint_last_good.json").is_file()
    assert not (tmp_path / "checkpoint_best.json").exists()


# ---------- evaluate / forecast / analyze ----------

def test_evaluate_reports_model_and_baselines(workspace, tmp_path):
    result = invoke("evaluate", "--dataset", workspace / "data",
                    "--checkpoint", workspace / "run" / "checkpoint_best.json", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert metrics.groupby("method").size().to_dict() == {"G-SWaN": 16, "HA": 16, "persistence": 16}
    assert (tmp_path / "metrics.txt").read_text().startswith("G-SWaN (speed)")


def test_evaluate_sensor_count_mismatch(workspace, tmp_path):
    assert invoke("generate", "--sensors", 4, "--days", 2, "--out", tmp_path / "four").exit_code == 0
    result = CliRunner().invoke(cli, ["evaluate", "--dataset", str(tmp_path / "four"),
                                      "--checkpoint", str(workspace / "run" / "checkpoint_best.json"),
                                      "--out", str(tmp_path / "eval")])
    assert result.exit_code == 2
    assert "3 sensors" in result.output and "4" in result.output


def test_evaluate_keeps_baselines_when_model_fails(workspace, tmp_path, monkeypatch):
    def broken(*args, **kwargs):
        raise TrainingDiverged("model produced non-finite forecasts", epoch=-1)

    monkeypatch.setattr(cli_module, "evaluate_split", broken)
    result = CliRunner().invoke(cli, ["evaluate", "--dataset", str(workspace / "data"),
                                      "--checkpoint", str(workspace / "run" / "checkpoint_best.json"),
                                      "--out", str(tmp_path)])
    assert result.exit_code == 3
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    assert set(metrics["method"]) == {"HA", "persistence"}


def test_forecast_rows(workspace, tmp_path):
    result = invoke("forecast", "--dataset", workspace / "data",
                    "--checkpoint", workspace / "run" / "checkpoint_final.json", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(tmp_path / "forecast.csv")
    assert list(frame.columns) == ["timestamp", "sensor", "step", "value"]
    assert len(frame) == 12 * 3
    assert frame["step"].max() == 12


def test_analyze_bundle(workspace, tmp_path):
    result = invoke("analyze", "--dataset", workspace / "data",
                    "--checkpoint", workspace / "run" / "checkpoint_best.json",
                    "--scatter", "s0", "--pair", "s0,s1", "--range", "0:100", "--out", tmp_path)
    assert result.exit_code == 0, result.output
    index = json.loads((tmp_path / "index.json").read_text())
    for name in ("analysis.json", "physical_adjacency.csv", "adaptive_adjacency.csv",
                 "scatter_s0.csv", "pair_s0_s1.csv", "resolved_config.env", "index.json"):
        assert name in index["files"]
    bundle = json.loads((tmp_path / "analysis.json").read_text())
    assert 0.0 <= bundle["adjacency_similarity"] <= 1.0
    assert bundle["probe"]["n_samples"] == 3
    assert len(pd.read_csv(tmp_path / "pair_s0_s1.csv")) == 100


def test_analyze_without_embeddings_notes_it(workspace, tmp_path):
    _, scaler, ids, _ = load_checkpoint(workspace / "run" / "checkpoint_best.json")
    cfg = ModelConfig(d_hidden=4, d_skip=4, n_layers=4, dilations=(1, 2, 4, 4), n_heads=1,
                      d_embed=2, k_hops=1, use_node_embeddings=False)
    ckpt = save_checkpoint(tmp_path / "plain.json", init_model(cfg, 3, seed=1), scaler, ids)
    result = CliRunner().invoke(cli, ["analyze", "--dataset", str(workspace / "data"),
                                      "--checkpoint", str(ckpt), "--out", str(tmp_path / "out")])
    assert result.exit_code == 0, result.output
    bundle = json.loads((tmp_path / "out" / "analysis.json").read_text())
    assert bundle["probe"] is None
    assert any("node embeddings" in n for n in bundle["notices"])
