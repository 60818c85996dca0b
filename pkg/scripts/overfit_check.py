# scripts/overfit_check.py
from __future__ import annotations
from pathlib import Path
import sys, time

from dotenv import load_dotenv
load_dotenv()

# -------------------------------------------------
# Figure out project root and ensure src/ is importable
# -------------------------------------------------
ROOT = (
    Path(__file__).resolve().parent.parent
    if (Path(__file__).parent.name == "scripts")
    else Path(__file__).parent
)
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from src.config import AugmentConfig, ModelConfig, SynthConfig, TrainConfig, setup_logging
from src.extract.synthetic import generate_graph, generate_traffic
from src.model.gswan import init_model
from src.train.loop import prepare_data, train

SEED = 11
EPOCHS = 200
SENSORS, DAYS = 8, 5

# Keep only a handful of windows: the point is memorization, not generalization
TRAIN_WINDOWS = 64


def overfit() -> bool:
    """
    Train on a small fixed set of windows without augmentation and check
    that the final train loss drops below 10% of the epoch-0 loss.
    """
    synth = SynthConfig(n_sensors=SENSORS, days=DAYS, seed=SEED)
    ds = generate_traffic(synth, generate_graph(synth))
    data = prepare_data(ds, (7, 1, 2))
    data.train.x = data.train.x[:TRAIN_WINDOWS]
    data.train.y = data.train.y[:TRAIN_WINDOWS]
    data.train.origins = data.train.origins[:TRAIN_WINDOWS]

    model = ModelConfig(d_hidden=16, d_skip=32, n_heads=2, d_embed=6)
    params = init_model(model, ds.n_sensors, SEED)
    cfg = TrainConfig(epochs=EPOCHS, batch_size=TRAIN_WINDOWS, seed=SEED, augment=False, lr0=5e-3, lr_decay=0.995)

    started = time.perf_counter()
    _, history = train(params, data, cfg, AugmentConfig(seed=SEED))
    elapsed = time.perf_counter() - started

    first, last = history.records[0].train_loss, history.records[-1].train_loss
    ok = last < 0.1 * first
    print(f"epoch-0 train MAE {first:.4f} -> final {last:.4f} ({last / first:.1%}) in {elapsed:.1f}s")
    print("PASS" if ok else "FAIL")
    return ok


if __name__ == "__main__":
    setup_logging("WARNING")
    print("=== OVERFIT CHECK START ===")
    passed = overfit()
    print("=== OVERFIT CHECK DONE ===")
    sys.exit(0 if passed else 1)
