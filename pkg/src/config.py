# src/config.py
"""
Run configuration for the G-SWaN pipeline.

Configuration lives in dotenv-style ``key=value`` files parsed with
python-dotenv. Keys are dotted and lowercase::

    dataset=data/toy
    out=runs/toy
    seed=7
    split=7:1:2
    model.d_hidden=40
    train.epochs=50
    augment.p_occlude=0.05

Precedence is flags > file > environment (GSWAN_*) > dataclass defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from src.errors import ConfigError

# Pick up GSWAN_* knobs from a local .env (safe to call multiple times)
load_dotenv()

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Dataset shapes of the public benchmarks: (sensors, edges, timesteps, split ratio)
DATASET_PRESETS: Dict[str, Tuple[int, int, int, Tuple[int, int, int]]] = {
    "METR-LA": (207, 1515, 34272, (7, 1, 2)),
    "PEMS-BAY": (325, 2369, 52116, (7, 1, 2)),
    "PEMS-D7": (228, 832, 12672, (6, 2, 2)),
    "PEMS-D8": (170, 277, 17856, (6, 2, 2)),
}

ABLATIONS = ("none", "no-node-embeddings", "single-head", "no-sgt")


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once; GSWAN_LOG_LEVEL wins over the default."""
    level = (level or os.getenv("GSWAN_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT)


def derive_seed(seed: int, purpose: str) -> int:
    """
    Stable 64-bit sub-seed for a named purpose.

    All randomness flows from one user seed; every consumer asks for its own
    stream by purpose string (e.g. "init", "shuffle/3", "augment/3").
    """
    digest = hashlib.blake2b(f"{int(seed)}/{purpose}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------- config sections ----------

@dataclass
class ModelConfig:
    d_hidden: int = 40
    d_skip: int = 80
    d_end: int = 0          # 0 means "same as d_skip"
    n_layers: int = 8
    dilations: Tuple[int, ...] = (1, 2, 1, 2, 1, 2, 1, 2)
    kernel_size: int = 2
    k_hops: int = 2
    n_heads: int = 4
    tau: float = 1.0
    d_embed: int = 10
    use_node_embeddings: bool = True
    use_sgt: bool = True
    mask_nonedges: bool = False
    horizon: int = 12
    input_length: int = 12
    in_channels: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    @property
    def receptive_field(self) -> int:
        return 1 + sum(int(d) * (self.kernel_size - 1) for d in self.dilations)

    @property
    def decoder_width(self) -> int:
        return self.d_end if self.d_end > 0 else self.d_skip

    def validate(self) -> "ModelConfig":
        extents = {
            "d_hidden": self.d_hidden, "d_skip": self.d_skip, "n_layers": self.n_layers,
            "kernel_size": self.kernel_size, "n_heads": self.n_heads, "d_embed": self.d_embed,
            "horizon": self.horizon, "input_length": self.input_length, "in_channels": self.in_channels,
        }
        for name, value in extents.items():
            if int(value) <= 0:
                raise ConfigError(f"model.{name} must be positive, got {value}")
        if self.k_hops < 0:
            raise ConfigError(f"model.k_hops must be >= 0, got {self.k_hops}")
        if self.tau <= 0:
            raise ConfigError(f"model.tau must be positive, got {self.tau}")
        if len(self.dilations) != self.n_layers:
            raise ConfigError(
                f"model.dilations lists {len(self.dilations)} entries for {self.n_layers} layers"
            )
        if any(int(d) <= 0 for d in self.dilations):
            raise ConfigError(f"model.dilations must be positive, got {self.dilations}")
        if self.receptive_field < self.input_length:
            missing = self.input_length - self.receptive_field
            raise ConfigError(
                f"receptive field {self.receptive_field} < input length {self.input_length}: "
                f"dilations must add at least {missing} more steps "
                f"(need sum(dilations)*(kernel_size-1) >= {self.input_length - 1})"
            )
        return self


@dataclass
class TrainConfig:
    lr0: float = 1e-3
    weight_decay: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    lr_decay: float = 0.97
    clip_norm: float = 3.0
    batch_size: int = 64
    eval_batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    augment: bool = True
    record_timing: bool = False

    def validate(self) -> "TrainConfig":
        if self.lr0 <= 0:
            raise ConfigError(f"train.lr0 must be positive, got {self.lr0}")
        if not (0 < self.lr_decay <= 1):
            raise ConfigError(f"train.lr_decay must be in (0, 1], got {self.lr_decay}")
        if self.clip_norm <= 0:
            raise ConfigError(f"train.clip_norm must be positive, got {self.clip_norm}")
        if self.batch_size <= 0 or self.eval_batch_size <= 0:
            raise ConfigError("train.batch_size and train.eval_batch_size must be positive")
        if self.epochs < 0:
            raise ConfigError(f"train.epochs must be >= 0, got {self.epochs}")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError(f"train.betas must be two values in [0, 1), got {self.betas}")
        return self


@dataclass
class AugmentConfig:
    p_occlude: float = 0.05
    occlude_scale: float = 0.05
    p_permute: float = 0.05
    noise_scale: float = 0.05
    seed: int = 0

    def validate(self) -> "AugmentConfig":
        for name in ("p_occlude", "p_permute"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"augment.{name} must be a probability, got {p}")
        for name in ("occlude_scale", "noise_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"augment.{name} must be >= 0")
        return self


@dataclass
class SynthConfig:
    n_sensors: int = 8
    days: int = 7
    topology: str = "ring"          # ring | grid | random
    p_edge: float = 0.3             # used by topology=random
    metric_kind: str = "speed"
    base_level: float = 60.0
    amplitude: float = 20.0
    phase_spread: float = 120.0     # minutes
    lag_range: Tuple[int, int] = (1, 6)
    gain_range: Tuple[float, float] = (0.05, 0.25)
    weekend_factor: float = 0.5
    noise_std: float = 1.0
    emit_flow: bool = False
    flow_base: float = 300.0
    flow_gain: float = 8.0
    start_timestamp: int = 1704067200   # 2024-01-01 00:00 UTC, a Monday
    seed: int = 0
    max_retries: int = 20

    def validate(self) -> "SynthConfig":
        if self.days < 1:
            raise ConfigError(f"synth.days must be >= 1, got {self.days}")
        if self.n_sensors < 2:
            raise ConfigError(f"synth.n_sensors must be >= 2, got {self.n_sensors}")
        if self.noise_std < 0:
            raise ConfigError("synth.noise_std must be >= 0")
        if self.topology not in ("ring", "grid", "random"):
            raise ConfigError(f"synth.topology must be ring|grid|random, got {self.topology!r}")
        if self.topology == "ring" and self.n_sensors < 3:
            # two sensors share a single road, so the ring would not have 2 * N edges
            raise ConfigError(f"synth.topology=ring needs at least 3 sensors, got {self.n_sensors}")
        if self.metric_kind not in ("speed", "flow"):
            raise ConfigError(f"synth.metric_kind must be speed|flow, got {self.metric_kind!r}")
        if not (0.0 < self.p_edge <= 1.0):
            raise ConfigError(f"synth.p_edge must be in (0, 1], got {self.p_edge}")
        if self.phase_spread < 0:
            raise ConfigError("synth.phase_spread must be >= 0")
        lo, hi = self.lag_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"synth.lag_range must satisfy 1 <= lo <= hi, got {self.lag_range}")
        return self


@dataclass
class RunConfig:
    dataset: Optional[str] = None
    out: str = field(default_factory=lambda: os.getenv("GSWAN_OUT_DIR", "runs"))
    split: Tuple[int, ...] = (7, 1, 2)
    seed: int = 0
    threads: int = 1
    ablation: str = "none"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def validate(self) -> "RunConfig":
        if len(self.split) != 3 or any(p <= 0 for p in self.split):
            raise ConfigError(f"split must be three positive parts, got {self.split}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        self.model.validate()
        self.train.validate()
        self.augment.validate()
        self.synth.validate()
        return self


SECTIONS = ("model", "train", "augment", "synth")


def apply_ablation(cfg: ModelConfig, name: str) -> ModelConfig:
    """Return a copy of `cfg` switched to one of the ablation variants."""
    if name == "none":
        return dataclasses.replace(cfg)
    if name == "no-node-embeddings":
        return dataclasses.replace(cfg, use_node_embeddings=False)
    if name == "single-head":
        return dataclasses.replace(cfg, n_heads=1)
    if name == "no-sgt":
        return dataclasses.replace(cfg, use_sgt=False)
    raise ConfigError(f"unknown ablation {name!r}; expected one of {ABLATIONS}")


# ---------- parsing ----------

def _coerce(raw: str, default: Any, key: str) -> Any:
    """Convert a text value to the type of the field's default."""
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            # "7:1:2" or "1,2,1,2"; element type follows the default's first element
            parts = [p for p in text.replace(":", ",").split(",") if p.strip()]
            elem = type(default[0]) if default else float
            return tuple(elem(p.strip()) for p in parts)
        if default is None or isinstance(default, str):
            return text
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={text!r}: {exc}") from exc
    raise ConfigError(f"unsupported config value type for {key}")


def _set(cfg: RunConfig, key: str, raw: Any) -> None:
    """Assign one dotted key on the RunConfig tree."""
    key = key.strip().lower()
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section in key {key!r}")
        target = getattr(cfg, section)
    else:
        name, target = key, cfg
        if name in SECTIONS:
            raise ConfigError(f"config key {key!r} names a section, not a value")
    names = {f.name for f in dataclasses.fields(target)}
    if name not in names:
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(target, name)
    value = raw if not isinstance(raw, str) else _coerce(raw, current, key)
    setattr(target, name, value)


def _env_items() -> Dict[str, str]:
    """GSWAN_MODEL__D_HIDDEN=… → model.d_hidden=…"""
    items: Dict[str, str] = {}
    for k, v in os.environ.items():
        if not k.startswith("GSWAN_") or k in ("GSWAN_LOG_LEVEL", "GSWAN_OUT_DIR"):
            continue
        items[k[len("GSWAN_"):].lower().replace("__", ".")] = v
    return items


def load_run_config(
    path: Optional[Path | str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """
    Build a RunConfig from defaults, environment, an optional file and flag overrides.

    Parameters
    ----------
    path : config file in dotenv key=value format (optional)
    overrides : already-typed or text values keyed like the file ("seed", "model.n_heads", …);
                None values are ignored so unset CLI flags fall through.
    """
    cfg = RunConfig()
    for k, v in _env_items().items():
        _set(cfg, k, v)

    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        for k, v in dotenv_values(p).items():
            if v is None:
                raise ConfigError(f"{p}: key {k!r} has no value")
            _set(cfg, k, v)

    for k, v in (overrides or {}).items():
        if v is not None:
            _set(cfg, k, v)

    # the run seed feeds the training and augmentation streams unless pinned
    if cfg.train.seed == 0:
        cfg.train.seed = cfg.seed
    if cfg.augment.seed == 0:
        cfg.augment.seed = cfg.seed
    if cfg.synth.seed == 0:
        cfg.synth.seed = cfg.seed
    if cfg.ablation != "none":
        cfg.model = apply_ablation(cfg.model, cfg.ablation)
    return cfg.validate()


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return "" if value is None else str(value)


def config_items(cfg: RunConfig) -> List[Tuple[str, str]]:
    """Flatten a RunConfig into (dotted key, text) pairs in declaration order."""
    items: List[Tuple[str, str]] = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sub in dataclasses.fields(value):
                items.append((f"{f.name}.{sub.name}", _fmt(getattr(value, sub.name))))
        elif f.name == "split":
            items.append(("split", ":".join(str(p) for p in value)))
        elif f.name == "ablation":
            # the variant is already folded into model.*
            continue
        else:
            items.append((f.name, _fmt(value)))
    return items


def write_resolved_config(cfg: RunConfig, out_dir: Path | str, extra: Optional[Iterable[Tuple[str, str]]] = None) -> Path:
    """Write resolved_config.env so the run can be reproduced with --config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"{k}={v}" for k, v in config_items(cfg) if v != ""]
    for k, v in extra or ():
        lines.append(f"# {k}: {v}")
    path = out / "resolved_config.env"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
