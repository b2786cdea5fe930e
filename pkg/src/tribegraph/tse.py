"""Tribe structure encoder: structural embeddings, GIN layers, sum readout.

Tribes are processed in fixed-size chunks.  Each chunk stacks its tribes'
nodes into one block-diagonal batch, so one pass of the ops below encodes
many tribes at once while per-tribe results stay independent.  Chunk
boundaries depend only on tribe order and ``chunk_size``, never on the worker
count, which is what makes threaded encoding bit-identical to serial.
"""
from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ShapeMismatch, WidthMismatch
from .features import StructFeatureTable
from .graph import Tribe, undirected_edges

DEG_BUCKETS = 12
SPD_BUCKETS = 8
N_KINDS = 3
CHUNK_SIZE = 64


def degree_bucket(deg, n_buckets: int = DEG_BUCKETS) -> np.ndarray:
    """``min(floor(log2(1 + deg)), n_buckets - 1)``, computed exactly on ints."""
    deg = np.asarray(deg, dtype=np.int64)
    # bit_length(1 + d) - 1 == floor(log2(1 + d)) without float rounding
    b = np.array([int(1 + d).bit_length() - 1 for d in deg.reshape(-1)], dtype=np.int64)
    return np.minimum(b, n_buckets - 1).reshape(deg.shape)


def spd_bucket(spd, n_buckets: int = SPD_BUCKETS) -> np.ndarray:
    return np.minimum(np.asarray(spd, dtype=np.int64), n_buckets - 1)


@dataclass
class TribeBatch:
    """Node-level arrays for a contiguous run of tribes, stacked."""

    tribe_ids: np.ndarray  # global tribe index of each local tribe slot
    node_tribe: np.ndarray  # local tribe slot of every stacked node
    deg_in: np.ndarray
    deg_out: np.ndarray
    kind: np.ndarray
    spd: np.ndarray
    eig: np.ndarray  # (n, 1)
    src: np.ndarray  # undirected edges listed in both directions
    dst: np.ndarray
    random_feats: np.ndarray | None = None
    adj: sp.csr_matrix | None = None  # symmetric, so it is its own transpose
    pool: sp.csr_matrix | None = None  # tribes x nodes indicator
    pool_t: sp.csr_matrix | None = None

    def __post_init__(self):
        n = self.n_nodes
        if self.adj is None:
            self.adj = sp.csr_matrix((np.ones(len(self.src)), (self.dst, self.src)), shape=(n, n))
        if self.pool is None:
            self.pool = sp.csr_matrix((np.ones(n), (self.node_tribe, np.arange(n))),
                                      shape=(self.n_tribes, n))
            self.pool_t = self.pool.T.tocsr()

    @property
    def n_nodes(self) -> int:
        return len(self.node_tribe)

    @property
    def n_tribes(self) -> int:
        return len(self.tribe_ids)


def make_batch(
    tribes: Sequence[Tribe],
    tables: Sequence[StructFeatureTable],
    deg_buckets: int = DEG_BUCKETS,
    spd_buckets: int = SPD_BUCKETS,
) -> TribeBatch:
    offs = np.cumsum([0] + [t.n_nodes for t in tribes])
    src, dst = [], []
    for t, off in zip(tribes, offs):
        und = undirected_edges(t) + off
        src += [und[:, 0], und[:, 1]]
        dst += [und[:, 1], und[:, 0]]
    cat = lambda xs: np.concatenate(xs) if xs else np.zeros(0, dtype=np.int64)  # noqa: E731
    return TribeBatch(
        tribe_ids=np.array([t.tribe_id for t in tribes], dtype=np.int64),
        node_tribe=np.repeat(np.arange(len(tribes)), [t.n_nodes for t in tribes]),
        deg_in=degree_bucket(cat([ft.deg_in for ft in tables]), deg_buckets),
        deg_out=degree_bucket(cat([ft.deg_out for ft in tables]), deg_buckets),
        kind=cat([ft.kind for ft in tables]).astype(np.int64),
        spd=spd_bucket(cat([ft.spd for ft in tables]), spd_buckets),
        eig=cat([ft.eig for ft in tables]).astype(np.float64).reshape(-1, 1),
        src=cat(src).astype(np.int64),
        dst=cat(dst).astype(np.int64),
    )


def make_batches(tribes, tables, chunk_size: int = CHUNK_SIZE, **kw) -> list[TribeBatch]:
    return [
        make_batch(tribes[i:i + chunk_size], tables[i:i + chunk_size], **kw)
        for i in range(0, len(tribes), chunk_size)
    ]


def attach_random_features(batches: Sequence[TribeBatch], width: int, seed: int) -> None:
    """Fixed Gaussian node inputs replacing the structural embedding.

    Each node's vector is a function of ``(seed, tribe id, local id)`` only.
    """
    for b in batches:
        feats = []
        for slot, tid in enumerate(b.tribe_ids):
            n = int(np.sum(b.node_tribe == slot))
            rng = np.random.default_rng([seed, int(tid)])
            feats.append(rng.standard_normal((n, width)))
        b.random_feats = np.concatenate(feats) if feats else np.zeros((0, width))


def embed_nodes(batch: TribeBatch, params: dict[str, Tensor], use_embeddings: bool = True) -> Tensor:
    """Per node ``[emb(deg_in) | emb(deg_out) | emb(kind) | emb(spd) | eig]``."""
    eig = Tensor(batch.eig)
    if not use_embeddings:
        return ad.concat_cols([Tensor(batch.random_feats), eig])
    return ad.concat_cols([
        ad.row_gather(params["tse.emb.deg_in"], batch.deg_in),
        ad.row_gather(params["tse.emb.deg_out"], batch.deg_out),
        ad.row_gather(params["tse.emb.kind"], batch.kind),
        ad.row_gather(params["tse.emb.spd"], batch.spd),
        eig,
    ])


def gin_layer(batch: TribeBatch, h: Tensor, params: dict[str, Tensor], layer: int) -> Tensor:
    """``MLP((1 + eps) * h_v + sum of neighbour h_u)`` over the undirected view."""
    p = f"tse.gin{layer}"
    neigh = ad.sparse_matmul(batch.adj, h, batch.adj)
    pre = ad.add(ad.mul(h, ad.add_scalar(params[f"{p}.eps"], 1.0)), neigh)
    hidden = ad.relu(ad.linear(pre, params[f"{p}.W1"], params[f"{p}.b1"]))
    return ad.linear(hidden, params[f"{p}.W2"], params[f"{p}.b2"])


def gin_forward(
    batch: TribeBatch,
    z: Tensor,
    params: dict[str, Tensor],
    n_layers: int,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
    training: bool = False,
) -> list[Tensor]:
    """Return ``[h0, h1, ..., hL]`` with ``h0 = z``."""
    if z.shape[0] != batch.n_nodes:
        raise ShapeMismatch(f"{z.shape[0]} input rows for {batch.n_nodes} nodes")
    reps = [z]
    h = z
    for layer in range(n_layers):
        h = gin_layer(batch, h, params, layer)
        h = ad.dropout(h, dropout, rng, training)
        reps.append(h)
    return reps


def readout(batch: TribeBatch, reps: Sequence[Tensor], params: dict[str, Tensor]) -> Tensor:
    """Layer-averaged sum pooling; layer 0 goes through a learned projection.

    ``h_g = (1 / (L + 1)) * sum_l SUM_nodes(h^(l))``
    """
    layers = [ad.linear(reps[0], params["tse.proj0.W"], params["tse.proj0.b"])] + list(reps[1:])
    widths = {h.shape[1] for h in layers}
    if len(widths) != 1:
        raise WidthMismatch(f"layer widths differ: {sorted(widths)}")
    total = layers[0]
    for h in layers[1:]:
        total = ad.add(total, h)
    pooled = ad.sparse_matmul(batch.pool, total, batch.pool_t)
    return ad.scale(pooled, 1.0 / len(layers))


def encode_batch(batch, params, n_layers, dropout=0.0, rng=None, training=False,
                 use_embeddings=True) -> Tensor:
    z = embed_nodes(batch, params, use_embeddings)
    reps = gin_forward(batch, z, params, n_layers, dropout, rng, training)
    return readout(batch, reps, params)


def dropout_rng(seed: int, step: int, view: int, chunk: int) -> np.random.Generator:
    """Counter-based stream keyed by ``(seed, step, view, chunk)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, step, view, chunk])))


@dataclass
class PendingChunk:
    """A chunk forward recorded on its own tape, awaiting upstream grads."""

    tape: ad.Tape
    out: Tensor
    leaf: Tensor


def encode_tribes(
    batches: Sequence[TribeBatch],
    params: dict[str, Tensor],
    n_layers: int,
    *,
    dropout: float = 0.0,
    n_views: int = 1,
    training: bool = False,
    seed: int = 0,
    step: int = 0,
    use_embeddings: bool = True,
    executor: Executor | None = None,
) -> tuple[list[Tensor], list[PendingChunk]]:
    """Encode every tribe ``n_views`` times.

    Returns one ``(N, d_t)`` tensor per view plus the per-chunk tapes.  When
    gradients are enabled each chunk runs on a private tape and enters the
    caller's tape as a leaf; after the caller's backward pass,
    :func:`finish_backward` pushes those leaf grads through the chunk tapes.
    """
    if n_views not in (1, 2):
        raise ValueError("n_views must be 1 or 2")
    grad_enabled = ad.grad_enabled() and any(p.requires_grad for p in params.values())
    jobs = [(v, c) for v in range(n_views) for c in range(len(batches))]

    def run(job):
        v, c = job
        rng = dropout_rng(seed, step, v, c) if training else None
        if not grad_enabled:
            with ad.no_grad():
                return encode_batch(batches[c], params, n_layers, dropout, rng, training, use_embeddings), None
        with ad.Tape() as tape:
            out = encode_batch(batches[c], params, n_layers, dropout, rng, training, use_embeddings)
        return out, tape

    results = list(executor.map(run, jobs)) if executor is not None else [run(j) for j in jobs]

    views, pending = [], []
    for v in range(n_views):
        parts = []
        for c in range(len(batches)):
            out, tape = results[v * len(batches) + c]
            if tape is not None and out.requires_grad:
                leaf = Tensor(out.data, requires_grad=True)
                pending.append(PendingChunk(tape, out, leaf))
                parts.append(leaf)
            else:
                parts.append(Tensor(out.data))
        views.append(ad.concat_rows(parts) if len(parts) > 1 else parts[0])
    return views, pending


def finish_backward(pending: Sequence[PendingChunk], executor: Executor | None = None) -> None:
    """Back-propagate chunk leaf grads and merge them in chunk order."""

    def run(pc: PendingChunk):
        if pc.leaf.grad is None or not np.any(pc.leaf.grad):
            pc.tape.clear()
            return {}
        return pc.tape.backward(pc.out, pc.leaf.grad)

    results = list(executor.map(run, pending)) if executor is not None else [run(p) for p in pending]
    for grads in results:
        for leaf, g in grads.values():
            ad.accumulate_grad(leaf, g)
