"""Parameter layout and the end-to-end forward pass.

Pipeline: tribe encoder -> attention fusion with central-node attributes ->
mean propagation over the news graph -> sigmoid head.  Ablation switches
remove individual stages.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import BadConfig
from .features import build_feature_table
from .fusion import TRIBE_NORMS, Propagation, fuse, normalize_tribe, ggrl_forward, predict
from .graph import TribeStyleGraph
from .tse import (
    CHUNK_SIZE,
    DEG_BUCKETS,
    N_KINDS,
    SPD_BUCKETS,
    TribeBatch,
    attach_random_features,
    encode_tribes,
    make_batches,
)

ABLATIONS = ("tse", "ggrl", "cl", "fusion", "attrs", "emb")


@dataclass
class ModelConfig:
    emb_dim: int = 16
    tribe_dim: int = 64
    gin_hidden: int = 64
    gin_layers: int = 2
    hidden: int = 64
    global_layers: int = 2
    deg_buckets: int = DEG_BUCKETS
    spd_buckets: int = SPD_BUCKETS
    dropout: float = 0.1
    global_activation: str = "relu"
    tribe_norm: str = "layer"
    chunk_size: int = CHUNK_SIZE
    no_tse: bool = False
    no_ggrl: bool = False
    no_cl: bool = False
    no_fusion: bool = False
    no_attrs: bool = False
    no_emb: bool = False

    def validate(self) -> "ModelConfig":
        for name in ("emb_dim", "tribe_dim", "gin_hidden", "gin_layers", "hidden",
                     "global_layers", "deg_buckets", "spd_buckets", "chunk_size"):
            if int(getattr(self, name)) < 1:
                raise BadConfig(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise BadConfig("dropout must be in [0, 1)")
        if self.global_activation not in ("relu", "linear"):
            raise BadConfig("global_activation must be 'relu' or 'linear'")
        if self.tribe_norm not in TRIBE_NORMS:
            raise BadConfig(f"tribe_norm must be one of {', '.join(TRIBE_NORMS)}")
        if self.no_tse and self.no_attrs:
            raise BadConfig("no_tse and no_attrs together leave no input")
        return self

    @property
    def node_input_dim(self) -> int:
        return 4 * self.emb_dim + 1

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        return asdict(self)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def init_params(cfg: ModelConfig, n_attrs: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, N(0, 0.02) embeddings, eps = 0."""
    p: dict[str, np.ndarray] = {}
    d_e, d_t, d = cfg.emb_dim, cfg.tribe_dim, cfg.hidden
    if not cfg.no_tse:
        p["tse.emb.deg_in"] = rng.normal(0.0, 0.02, (cfg.deg_buckets, d_e))
        p["tse.emb.deg_out"] = rng.normal(0.0, 0.02, (cfg.deg_buckets, d_e))
        p["tse.emb.kind"] = rng.normal(0.0, 0.02, (N_KINDS, d_e))
        p["tse.emb.spd"] = rng.normal(0.0, 0.02, (cfg.spd_buckets, d_e))
        d_in = cfg.node_input_dim
        p["tse.proj0.W"] = glorot(rng, d_in, d_t)
        p["tse.proj0.b"] = np.zeros((1, d_t))
        for layer in range(cfg.gin_layers):
            fan = d_in if layer == 0 else d_t
            p[f"tse.gin{layer}.eps"] = np.zeros((1, 1))
            p[f"tse.gin{layer}.W1"] = glorot(rng, fan, cfg.gin_hidden)
            p[f"tse.gin{layer}.b1"] = np.zeros((1, cfg.gin_hidden))
            p[f"tse.gin{layer}.W2"] = glorot(rng, cfg.gin_hidden, d_t)
            p[f"tse.gin{layer}.b2"] = np.zeros((1, d_t))
        p["fusion.W_g"] = glorot(rng, d_t, d)
    if not cfg.no_attrs:
        p["fusion.W_x"] = glorot(rng, n_attrs, d)
    if not (cfg.no_tse or cfg.no_attrs or cfg.no_fusion):
        p["fusion.a_g"] = glorot(rng, 2 * d, 1, (1, 2 * d))
        p["fusion.a_x"] = glorot(rng, 2 * d, 1, (1, 2 * d))
    if not cfg.no_ggrl:
        for layer in range(cfg.global_layers):
            p[f"ggrl.W{layer}"] = glorot(rng, d, d)
    p["head.W"] = glorot(rng, d, 1)
    p["head.b"] = np.zeros((1, 1))
    if cfg.no_emb and not cfg.no_tse:
        for k in ("deg_in", "deg_out", "kind", "spd"):
            del p[f"tse.emb.{k}"]
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


@dataclass
class PreparedGraph:
    """Model-ready arrays derived once from a graph."""

    n: int
    batches: list[TribeBatch]
    x: np.ndarray
    prop: Propagation
    labels: np.ndarray


def feature_tables(graph: TribeStyleGraph, executor: Executor | None = None):
    tribes = list(graph.tribes)
    if executor is None:
        return [build_feature_table(t) for t in tribes]
    return list(executor.map(build_feature_table, tribes))


def prepare_graph(
    graph: TribeStyleGraph,
    cfg: ModelConfig,
    x: np.ndarray,
    *,
    seed: int = 0,
    tables: Sequence | None = None,
    executor: Executor | None = None,
) -> PreparedGraph:
    """``x`` is the (already scaled) attribute matrix to feed the model."""
    batches: list[TribeBatch] = []
    if not cfg.no_tse:
        if tables is None:
            tables = feature_tables(graph, executor)
        batches = make_batches(list(graph.tribes), list(tables), cfg.chunk_size,
                               deg_buckets=cfg.deg_buckets, spd_buckets=cfg.spd_buckets)
        if cfg.no_emb:
            attach_random_features(batches, 4 * cfg.emb_dim, seed)
    return PreparedGraph(
        n=graph.n_central,
        batches=batches,
        x=np.asarray(x, dtype=np.float64),
        prop=Propagation.from_global(graph.global_graph),
        labels=np.asarray(graph.labels),
    )


@dataclass
class ForwardResult:
    prob: Tensor
    h0: Tensor
    hidden: Tensor
    tribe_views: list[Tensor] = field(default_factory=list)
    pending: list = field(default_factory=list)
    alpha_g: Tensor | None = None
    alpha_x: Tensor | None = None


def forward_full(
    prep: PreparedGraph,
    params: dict[str, Tensor],
    cfg: ModelConfig,
    *,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    executor: Executor | None = None,
) -> ForwardResult:
    """Run the whole model.

    In training mode with the contrastive term enabled the tribe encoder runs
    twice with independent dropout masks; the first (query) view feeds the
    classifier and both are returned for the contrastive loss.
    """
    views, pending = [], []
    if not cfg.no_tse:
        n_views = 2 if (training and not cfg.no_cl) else 1
        views, pending = encode_tribes(
            prep.batches, params, cfg.gin_layers,
            dropout=cfg.dropout, n_views=n_views, training=training,
            seed=seed, step=step, use_embeddings=not cfg.no_emb, executor=executor,
        )
    x = Tensor(prep.x)
    tribe = normalize_tribe(views[0], cfg.tribe_norm) if views else None
    alpha_g = alpha_x = None
    if cfg.no_tse:
        h0 = ad.matmul(x, params["fusion.W_x"])
    elif cfg.no_attrs:
        h0 = ad.matmul(tribe, params["fusion.W_g"])
    elif cfg.no_fusion:
        h0 = ad.add(ad.matmul(tribe, params["fusion.W_g"]), ad.matmul(x, params["fusion.W_x"]))
    else:
        h0, alpha_g, alpha_x = fuse(tribe, x, params)
    if cfg.no_ggrl:
        hidden = h0
    else:
        weights = [params[f"ggrl.W{i}"] for i in range(cfg.global_layers)]
        hidden = ggrl_forward(prep.prop, h0, weights, cfg.global_activation)
    prob = predict(hidden, params["head.W"], params["head.b"])
    return ForwardResult(prob, h0, hidden, views, pending, alpha_g, alpha_x)
