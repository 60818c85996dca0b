# smoke_pipeline.py

from dotenv import load_dotenv
load_dotenv()  # GSWAN_LOG_LEVEL / GSWAN_OUT_DIR from .env

import os, sys
from pathlib import Path

# --- import local src package ---
# Figure out the project root and make sure "src.*" imports work
ROOT = Path(__file__).parent.resolve()
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

# --- extract ---
from src.config import ModelConfig, SynthConfig, TrainConfig, AugmentConfig, setup_logging
from src.extract.synthetic import generate_graph, generate_traffic, synth_manifest
from src.extract.traffic_dir import load_dataset

# --- transform / model / train ---
from src.model.gswan import init_model, adaptive_adjacency
from src.train.loop import prepare_data, train, evaluate_split

# --- evaluate ---
from src.evaluate.metrics import horizon_report
from src.evaluate.analysis import adjacency_similarity, probe_embeddings

# --- load ---
from src.load.to_disk import write_dataset, write_frame
from src.load.checkpoint import save_checkpoint

# ------------------------
# Desk-scale settings for this smoke run
# ------------------------
OUT = Path(os.getenv("GSWAN_OUT_DIR", "runs")) / "smoke"
SEED = 7
SENSORS, DAYS = 8, 5
EPOCHS = 5

# Small network so one epoch takes seconds on a laptop
MODEL = ModelConfig(d_hidden=8, d_skip=16, n_heads=2, d_embed=4)


def main():
    setup_logging()

    # --- Extract ---
    # Generate a synthetic network, write it in the dataset format, read it back
    synth = SynthConfig(n_sensors=SENSORS, days=DAYS, seed=SEED)
    ds = generate_traffic(synth, generate_graph(synth))
    write_dataset(ds, OUT / "data", manifest=synth_manifest(synth))
    ds = load_dataset(OUT / "data")
    print("Dataset:", ds.values.shape)

    # --- Transform ---
    data = prepare_data(ds, (7, 1, 2))
    print("Windows:", data.train.size, data.val.size, data.test.size)

    # --- Train ---
    params = init_model(MODEL, ds.n_sensors, SEED)
    best, history = train(params, data, TrainConfig(epochs=EPOCHS, batch_size=32, seed=SEED),
                          AugmentConfig(seed=SEED))
    print(history.to_frame().to_string(index=False))

    # --- Evaluate ---
    y, h = evaluate_split(best, data, "test")
    report = horizon_report(y, h, ds.metric_kind)
    print(report.to_text())

    # --- Analyze ---
    a_adp = adaptive_adjacency(best.embeddings)
    print("cosine(A_r, A_adp):", adjacency_similarity(data.a_r, a_adp))
    print("probe R2:", probe_embeddings(best.embeddings, ds.coords, use_kernels=False).r2_linear)

    # --- Load ---
    save_checkpoint(OUT / "checkpoint_best.json", best, data.scaler, ds.sensor_ids)
    write_frame(history.to_frame(), OUT / "history.csv")
    write_frame(report.to_frame(), OUT / "metrics.csv")


if __name__ == "__main__":
    print("=== SMOKE PIPELINE START ===")
    main()
    print("=== SMOKE PIPELINE DONE ===")
