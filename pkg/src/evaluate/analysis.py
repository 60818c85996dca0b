# src/evaluate/analysis.py
"""
Post-training analysis of what the model learned.

- probe_embeddings: least-squares probe from node embeddings to sensor
  coordinates, optionally through sin / cos / tan kernels
- adjacency_similarity: cosine similarity of two flattened adjacency matrices
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.errors import DimensionError
from src.model.gswan import NodeEmbeddings

logger = logging.getLogger(__name__)

# Keeps least squares finite near odd multiples of pi/2
TAN_CLIP = 1e3

TARGETS = ("longitude", "latitude")


@dataclass
class LinearFit:
    r2: float
    per_target: Dict[str, float]
    coef: np.ndarray          # [1 + features, 2], intercept first
    n_features: int
    rank_deficient: bool


@dataclass
class ProbeResult:
    linear: LinearFit
    kernel: Optional[LinearFit]
    n_samples: int

    @property
    def r2_linear(self) -> float:
        return self.linear.r2

    @property
    def r2_kernel(self) -> Optional[float]:
        return None if self.kernel is None else self.kernel.r2

    def to_dict(self) -> Dict:
        def fit(f: Optional[LinearFit]) -> Optional[Dict]:
            if f is None:
                return None
            return {
                "r2": f.r2,
                "per_target": f.per_target,
                "n_features": f.n_features,
                "rank_deficient": f.rank_deficient,
                "intercept": f.coef[0].tolist(),
                "coef": f.coef[1:].tolist(),
            }
        return {"n_samples": self.n_samples, "linear": fit(self.linear), "kernel": fit(self.kernel)}


def kernel_features(x: np.ndarray) -> np.ndarray:
    """[x, sin x, cos x, clip(tan x)] column-wise."""
    tan = np.clip(np.tan(x), -TAN_CLIP, TAN_CLIP)
    return np.concatenate([x, np.sin(x), np.cos(x), tan], axis=1)


def r2_score(y: np.ndarray, pred: np.ndarray) -> float:
    """1 - SS_res / SS_tot; a constant target scores 0."""
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        return 0.0
    ss_res = float(np.sum((y - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def _ols(features: np.ndarray, targets: np.ndarray) -> LinearFit:
    n, k = features.shape
    design = np.hstack([np.ones((n, 1)), features])
    rank = int(np.linalg.matrix_rank(design))
    deficient = n <= k or rank < design.shape[1]
    if deficient:
        logger.warning(
            "probe design is rank deficient (samples=%d, features=%d, rank=%d); "
            "R^2 is optimistic with %d residual degrees of freedom",
            n, k, rank, max(n - rank, 0),
        )
    # minimum-norm solution for singular systems
    coef = np.linalg.pinv(design) @ targets
    pred = design @ coef
    per_target = {name: r2_score(targets[:, j], pred[:, j]) for j, name in enumerate(TARGETS)}
    return LinearFit(
        r2=float(np.mean(list(per_target.values()))),
        per_target=per_target,
        coef=coef,
        n_features=k,
        rank_deficient=deficient,
    )


def probe_embeddings(e: NodeEmbeddings, coords: np.ndarray, use_kernels: bool = True) -> ProbeResult:
    """
    Regress (longitude, latitude) on [e1 | e2] with an intercept.

    R^2 is averaged over the two targets. With use_kernels the features are
    extended by sin, cos and clipped tan of every embedding column.
    """
    feats = np.hstack([np.asarray(e.e1, dtype=np.float64), np.asarray(e.e2, dtype=np.float64)])
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (feats.shape[0], 2):
        raise DimensionError("probe_embeddings", feats.shape, coords.shape,
                             detail="coords must be [N, 2] matching the embeddings")

    linear = _ols(feats, coords)
    kernel = _ols(kernel_features(feats), coords) if use_kernels else None
    logger.info("embedding probe: R2 linear=%.4f kernel=%s", linear.r2,
                "n/a" if kernel is None else f"{kernel.r2:.4f}")
    return ProbeResult(linear=linear, kernel=kernel, n_samples=int(feats.shape[0]))


def adjacency_similarity(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """dot(vec a, vec b) / (|a| |b|); None when either matrix is all zeros."""
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise DimensionError("adjacency_similarity", a.shape, b.shape)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.dot(a, b) / (na * nb))


def top_pairs(a: np.ndarray, sensor_ids: List[str], k: int = 10) -> List[Tuple[str, str, float]]:
    """Strongest off-diagonal entries of an adjacency matrix."""
    m = np.array(a, dtype=np.float64, copy=True)
    np.fill_diagonal(m, -np.inf)
    flat = np.argsort(m, axis=None)[::-1][:k]
    rows, cols = np.unravel_index(flat, m.shape)
    return [(sensor_ids[i], sensor_ids[j], float(m[i, j])) for i, j in zip(rows, cols) if np.isfinite(m[i, j])]
