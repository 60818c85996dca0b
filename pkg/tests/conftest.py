from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from src.config import ModelConfig, SynthConfig
from src.extract.synthetic import generate_graph, generate_traffic


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def write_toy_dir(root: Path, values_text: str, edges_text: str, meta: dict) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    (root / "values.csv").write_text(values_text, encoding="utf-8")
    (root / "edges.csv").write_text(edges_text, encoding="utf-8")
    (root / "meta.json").write_text(json.dumps(meta), encoding="utf-8")
    return root


@pytest.fixture
def toy_dir(tmp_path: Path) -> Path:
    """2 sensors x 4 rows, one missing cell, starting at local midnight."""
    return write_toy_dir(
        tmp_path / "toy",
        "a,b\n1.0,2.0\n3.0,\n5.0,6.0\nNaN,8.0\n",
        "src,dst,distance\na,b,100.0\nb,a,300.0\n",
        {"metric_kind": "speed", "start_timestamp": 1704067200, "step_seconds": 300,
         "coords": {"a": [-118.2, 34.0], "b": [-118.3, 34.1]}},
    )


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    """N=3-sized network: D=4, two layers, short windows."""
    return ModelConfig(
        d_hidden=4, d_skip=4, n_layers=2, dilations=(1, 2), kernel_size=2,
        k_hops=2, n_heads=2, d_embed=3, input_length=4, horizon=3,
    )


@pytest.fixture
def small_synth() -> SynthConfig:
    return SynthConfig(n_sensors=4, days=3, seed=5)


@pytest.fixture
def small_dataset(small_synth):
    return generate_traffic(small_synth, generate_graph(small_synth))
