# src/model/gswan.py
"""
Graph Self-attention WaveNet.

    x [B, 2, N, L] (metric, time-of-day; standardized)
      -> initial embedding: two parallel channel FCs, summed      [B, D, N, L]
      -> W layers:
           t = tanh(conv_f(h)) * sigmoid(conv_g(h))                 [B, D, N, L']
           s = spatial graph transformer over A_r and A_adp
           skip += FC_skip_t(t) + FC_skip_s(s)
           h = batchnorm(s) + FC_res(h[..., -L':])
      -> decoder: mish -> FC -> mish -> FC on the last step           [B, F, N]

Propagation uses the row-vector convention x' = x . alpha^k, i.e. node w
receives sum_v x[v] alpha[v, w]. The input is left-padded with zeros up to
the receptive field, so the stack ends on a single timestep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional

import numpy as np

from src.config import ModelConfig, derive_seed
from src.diffcore import ops
from src.diffcore.graph import Graph, Node
from src.diffcore.ops import BatchNormState
from src.errors import DimensionError
from src.transform.features import row_normalize

logger = logging.getLogger(__name__)

# Pre-softmax value given to non-edges when mask_nonedges is on
NONEDGE_LOGIT = -1e9


class NodeEmbeddings(NamedTuple):
    e1: np.ndarray   # [N, d_embed] source
    e2: np.ndarray   # [N, d_embed] target


@dataclass
class ModelParams:
    """All learnable values plus batch-norm running state."""
    config: ModelConfig
    n_sensors: int
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    bn: Dict[str, BatchNormState] = field(default_factory=dict)

    @property
    def embeddings(self) -> Optional[NodeEmbeddings]:
        if "node.e1" not in self.weights:
            return None
        return NodeEmbeddings(self.weights["node.e1"], self.weights["node.e2"])

    def parameter_count(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            n_sensors=self.n_sensors,
            weights={k: v.copy() for k, v in self.weights.items()},
            bn={k: v.copy() for k, v in self.bn.items()},
        )


class ForwardPass(NamedTuple):
    graph: Graph
    output: Node                # [B, F, N], standardized units
    leaves: Dict[str, Node]     # parameter name -> leaf node


# ---------- parameters ----------

def _branches(cfg: ModelConfig) -> int:
    """Number of adjacency branches: A_r always, A_adp only with node embeddings."""
    return 2 if cfg.use_node_embeddings else 1


def _heads(cfg: ModelConfig) -> int:
    """Static supports (GCN without SGT) have no attention heads."""
    return cfg.n_heads if cfg.use_sgt else 1


def mix_width(cfg: ModelConfig) -> int:
    """Channels after concatenating the self term and every (branch, head, hop >= 1) propagation."""
    return cfg.d_hidden * (1 + _branches(cfg) * _heads(cfg) * cfg.k_hops)


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_model(cfg: ModelConfig, n_sensors: int, seed: int) -> ModelParams:
    """
    Fresh parameters, deterministic per seed.

    Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases 0;
    batch-norm scale 1 / shift 0; node embeddings ~ N(0, 1) * 0.1.
    """
    cfg.validate()
    if n_sensors < 1:
        raise DimensionError("init_model", (n_sensors,), detail="need at least one sensor")

    rng = np.random.default_rng(derive_seed(seed, "init"))
    w: Dict[str, np.ndarray] = {}
    bn: Dict[str, BatchNormState] = {}
    d, k, e = cfg.d_hidden, cfg.kernel_size, cfg.d_embed

    def linear(name: str, out_dim: int, in_dim: int) -> None:
        w[f"{name}.w"] = _glorot(rng, (out_dim, in_dim), in_dim, out_dim)
        w[f"{name}.b"] = np.zeros(out_dim)

    def conv(name: str) -> None:
        w[f"{name}.w"] = _glorot(rng, (d, d, 1, k), d * k, d * k)
        w[f"{name}.b"] = np.zeros(d)

    linear("embed.metric", d, 1)
    linear("embed.tod", d, 1)

    for i in range(cfg.n_layers):
        p = f"layer{i}"
        conv(f"{p}.filter")
        conv(f"{p}.gate")
        if cfg.use_sgt:
            linear(f"{p}.proj", e, d)
            for h in range(cfg.n_heads):
                linear(f"{p}.head{h}.q", e, e)
                linear(f"{p}.head{h}.k", e, e)
        linear(f"{p}.mix1", d, mix_width(cfg))
        linear(f"{p}.mix2", d, d)
        linear(f"{p}.residual", d, d)
        linear(f"{p}.skip_t", cfg.d_skip, d)
        linear(f"{p}.skip_s", cfg.d_skip, d)
        w[f"{p}.bn.gamma"] = np.ones(d)
        w[f"{p}.bn.beta"] = np.zeros(d)
        bn[f"{p}.bn"] = BatchNormState.fresh(d, cfg.bn_momentum, cfg.bn_eps)

    linear("decoder.1", cfg.decoder_width, cfg.d_skip)
    linear("decoder.2", cfg.horizon, cfg.decoder_width)

    if cfg.use_node_embeddings:
        w["node.e1"] = rng.normal(0.0, 1.0, size=(n_sensors, e)) * 0.1
        w["node.e2"] = rng.normal(0.0, 1.0, size=(n_sensors, e)) * 0.1

    params = ModelParams(config=cfg, n_sensors=n_sensors, weights=w, bn=bn)
    logger.debug("initialized model: %d parameters for %d sensors", params.parameter_count(), n_sensors)
    return params


# ---------- building blocks (graph level) ----------

def initial_embed(x_metric: Node, x_tod: Node, p: Mapping[str, Node]) -> Node:
    """Two parallel channel FCs (metric, time-of-day) aggregated by summation."""
    if x_metric.shape != x_tod.shape:
        raise DimensionError("initial_embed", x_metric.shape, x_tod.shape)
    m = ops.linear_channels(x_metric, p["embed.metric.w"], p["embed.metric.b"])
    t = ops.linear_channels(x_tod, p["embed.tod.w"], p["embed.tod.b"])
    return m + t


def wavenet_block(h: Node, p: Mapping[str, Node], prefix: str, dilation: int) -> Node:
    """Gated dilated convolution: tanh(filter) * sigmoid(gate); L' = L - dilation*(k-1)."""
    f = ops.conv1d_dilated(h, p[f"{prefix}.filter.w"], dilation)
    f = f + ops.reshape(p[f"{prefix}.filter.b"], (1, -1, 1, 1))
    gt = ops.conv1d_dilated(h, p[f"{prefix}.gate.w"], dilation)
    gt = gt + ops.reshape(p[f"{prefix}.gate.b"], (1, -1, 1, 1))
    return ops.tanh(f) * ops.sigmoid(gt)


def adaptive_adjacency_node(e1: Node, e2: Node) -> Node:
    """A_adp = SoftMax(ReLU(e1 e2^T)) row-wise."""
    scores = ops.matmul_batched(e1, ops.transpose(e2, (1, 0)))
    return ops.softmax_temperature(ops.relu(scores), 1.0, axis=-1)


def adaptive_adjacency(e: NodeEmbeddings) -> np.ndarray:
    """Numeric A_adp for analysis; rows sum to 1, entries > 0."""
    g = Graph()
    return adaptive_adjacency_node(g.constant(e.e1), g.constant(e.e2)).value


def sgt_attention(a: Node, x: Node, e_src: Optional[Node], e_tgt: Optional[Node],
                  p: Mapping[str, Node], prefix: str, n_heads: int, tau: float,
                  mask_nonedges: bool = False) -> Node:
    """
    alpha [B, H, N, N] = softmax_tau(sigmoid(A * (Q K^T))) per head.

    Q/K come from the temporally mean-pooled features projected to d_embed,
    plus the target/source node embeddings when those are enabled.
    """
    n = x.shape[2]
    if a.shape != (n, n):
        raise DimensionError("sgt_attention", a.shape, x.shape, detail="adjacency must be N x N")

    pooled = ops.transpose(ops.mean(x, axis=3), (0, 2, 1))                   # [B, N, D]
    base = ops.linear_last(pooled, p[f"{prefix}.proj.w"], p[f"{prefix}.proj.b"])  # [B, N, E]
    key_in = base + e_src if e_src is not None else base
    query_in = base + e_tgt if e_tgt is not None else base

    heads: List[Node] = []
    for h in range(n_heads):
        k = ops.linear_last(key_in, p[f"{prefix}.head{h}.k.w"], p[f"{prefix}.head{h}.k.b"])
        q = ops.linear_last(query_in, p[f"{prefix}.head{h}.q.w"], p[f"{prefix}.head{h}.q.b"])
        qk = ops.matmul_batched(q, ops.transpose(k, (0, 2, 1)))           # [B, N, N]
        heads.append(ops.reshape(qk, (qk.shape[0], 1, n, n)))
    scores = ops.concat(heads, axis=1) * a                                   # [B, H, N, N]
    gated = ops.sigmoid(scores)

    if mask_nonedges:
        edge = (a.value > 0).astype(np.float64)
        gated = gated * edge + (1.0 - edge) * NONEDGE_LOGIT

    return ops.softmax_temperature(gated, tau, axis=-1)


def _propagate(xt: Node, support: Node, hops: int) -> List[Node]:
    """
    x . S^k for k = 1..hops, with xt laid out [B, D, L, N].

    support is [B, 1, N, N] (per-sample attention) or [N, N] (static).
    """
    outs: List[Node] = []
    cur = xt
    for _ in range(hops):
        cur = ops.matmul_batched(cur, support)
        outs.append(cur)
    return outs


def sgt_block(x: Node, a_r: Node, a_adp: Optional[Node], emb: Optional[NodeEmbeddings],
              p: Mapping[str, Node], prefix: str, cfg: ModelConfig) -> Node:
    """
    x' = aggregate over (branch, head, hop) of x . alpha(A_branch)^k.

    The self term (k = 0) and every propagated copy are concatenated on the
    channel axis and mapped back to D channels by FC -> mish -> FC. With
    use_sgt off the alphas are the static row-normalized A_r and A_adp.
    """
    b, d, n, length = x.shape
    xt = ops.transpose(x, (0, 1, 3, 2))                                      # [B, D, L, N]
    pieces: List[Node] = [xt]

    supports: List[Node] = [a_r] if a_adp is None else [a_r, a_adp]
    if cfg.use_sgt:
        e_src, e_tgt = (emb.e1, emb.e2) if emb is not None else (None, None)
        for a in supports:
            alpha = sgt_attention(a, x, e_src, e_tgt, p, prefix, cfg.n_heads, cfg.tau, cfg.mask_nonedges)
            for h in range(cfg.n_heads):
                head = ops.reshape(ops.take(alpha, 1, h), (b, 1, n, n))
                pieces.extend(_propagate(xt, head, cfg.k_hops))
    else:
        for a in supports:
            pieces.extend(_propagate(xt, a, cfg.k_hops))

    stacked = ops.transpose(ops.concat(pieces, axis=1), (0, 1, 3, 2))         # [B, D*(...), N, L]
    mixed = ops.linear_channels(stacked, p[f"{prefix}.mix1.w"], p[f"{prefix}.mix1.b"])
    return ops.linear_channels(ops.mish(mixed), p[f"{prefix}.mix2.w"], p[f"{prefix}.mix2.b"])


# ---------- full network ----------

def forward(params: ModelParams, x: np.ndarray, a_r: np.ndarray, mode: str = "train",
            graph: Optional[Graph] = None, overrides: Optional[Mapping[str, Node]] = None) -> ForwardPass:
    """
    Run the network on a standardized batch x [B, 2, N, L].

    Every parameter becomes a named leaf of `graph` unless `overrides`
    supplies the node to use instead (the gradient oracle does this).
    In train mode batch-norm uses batch statistics and updates params.bn.
    """
    cfg = params.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != cfg.in_channels or x.shape[3] != cfg.input_length:
        raise DimensionError(
            "forward", x.shape, (None, cfg.in_channels, params.n_sensors, cfg.input_length),
            detail="expected [B, channels, N, L]",
        )
    if x.shape[2] != params.n_sensors or np.shape(a_r) != (params.n_sensors, params.n_sensors):
        raise DimensionError("forward", x.shape, np.shape(a_r),
                             detail=f"model was built for {params.n_sensors} sensors")

    g = graph or Graph()
    overrides = dict(overrides or {})
    leaves: Dict[str, Node] = {}
    for name, value in params.weights.items():
        leaves[name] = overrides[name] if name in overrides else g.leaf(value, name=name)
    p = leaves

    xin = g.constant(x)
    pad = cfg.receptive_field - cfg.input_length
    if pad > 0:
        xin = ops.pad_left(xin, pad)

    h = initial_embed(ops.slice_axis(xin, 1, 0, 1), ops.slice_axis(xin, 1, 1, 2), p)

    emb: Optional[NodeEmbeddings] = None
    a_adp: Optional[Node] = None
    if cfg.use_node_embeddings:
        emb = NodeEmbeddings(p["node.e1"], p["node.e2"])
        a_adp = adaptive_adjacency_node(emb.e1, emb.e2)

    a_phys = np.asarray(a_r, dtype=np.float64)
    a_node = g.constant(a_phys if cfg.use_sgt else row_normalize(a_phys))

    skip: Optional[Node] = None
    for i, dilation in enumerate(cfg.dilations):
        prefix = f"layer{i}"
        residual = h
        t = wavenet_block(h, p, prefix, dilation)
        s = sgt_block(t, a_node, a_adp, emb, p, prefix, cfg)
        out_len = t.shape[3]

        part = (ops.linear_channels(t, p[f"{prefix}.skip_t.w"], p[f"{prefix}.skip_t.b"])
                + ops.linear_channels(s, p[f"{prefix}.skip_s.w"], p[f"{prefix}.skip_s.b"]))
        skip = part if skip is None else part + ops.slice_axis(skip, 3, skip.shape[3] - out_len)

        normed = ops.batch_norm(s, p[f"{prefix}.bn.gamma"], p[f"{prefix}.bn.beta"],
                                params.bn[f"{prefix}.bn"], mode=mode)
        trimmed = ops.slice_axis(residual, 3, residual.shape[3] - out_len)
        h = normed + ops.linear_channels(trimmed, p[f"{prefix}.residual.w"], p[f"{prefix}.residual.b"])

    last = ops.slice_axis(skip, 3, skip.shape[3] - 1)                         # [B, D_r, N, 1]
    hidden = ops.linear_channels(ops.mish(last), p["decoder.1.w"], p["decoder.1.b"])
    out = ops.linear_channels(ops.mish(hidden), p["decoder.2.w"], p["decoder.2.b"])  # [B, F, N, 1]
    out = ops.reshape(out, (x.shape[0], cfg.horizon, params.n_sensors))
    return ForwardPass(graph=g, output=out, leaves=leaves)


def predict(params: ModelParams, x: np.ndarray, a_r: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forecasts [B, F, N] in standardized units, batch by batch."""
    outs = []
    for start in range(0, x.shape[0], batch_size):
        chunk = x[start:start + batch_size]
        outs.append(forward(params, chunk, a_r, mode="eval").output.value)
    if not outs:
        return np.zeros((0, params.config.horizon, params.n_sensors))
    return np.concatenate(outs, axis=0)
