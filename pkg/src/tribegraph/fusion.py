"""Attention fusion of tribe and attribute views, global propagation, head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ShapeMismatch
from .graph import GlobalGraph


TRIBE_NORMS = ("none", "l2", "layer")


def normalize_tribe(h_g: Tensor, mode: str = "layer") -> Tensor:
    """Parameter-free rescaling of tribe vectors before they meet attributes.

    Sum pooling makes ``h_g`` grow with tribe size and hub degree, easily two
    orders of magnitude above standardized attributes, which pins the fusion
    softmax to the attribute side.  ``"layer"`` centres each row and scales it
    to unit RMS; ``"l2"`` scales each row to norm ``sqrt(d_t)``.
    """
    if mode == "none":
        return h_g
    d = h_g.shape[1]
    if mode == "layer":
        h_g = ad.sub(h_g, ad.scale(ad.row_sum(h_g), 1.0 / d))
    elif mode != "l2":
        raise ValueError(f"unknown tribe normalisation {mode!r}")
    return ad.scale(ad.l2_normalize_rows(h_g), float(np.sqrt(d)))


def fuse(h_g: Tensor, x: Tensor, params: dict[str, Tensor]) -> tuple[Tensor, Tensor, Tensor]:
    """Attention-weighted sum of the projected tribe and attribute vectors.

    Returns ``(h0, alpha_g, alpha_x)``; the two weight columns sum to one.
    """
    if h_g.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"fuse: {h_g.shape[0]} tribe rows vs {x.shape[0]} attribute rows")
    pg = ad.matmul(h_g, params["fusion.W_g"])
    px = ad.matmul(x, params["fusion.W_x"])
    both = ad.concat_cols([pg, px])
    e_g = ad.leaky_relu(ad.matmul(both, ad.transpose(params["fusion.a_g"])))
    e_x = ad.leaky_relu(ad.matmul(both, ad.transpose(params["fusion.a_x"])))
    alpha_g, alpha_x = ad.softmax_pair(e_g, e_x)
    h0 = ad.add(ad.mul(alpha_g, pg), ad.mul(alpha_x, px))
    return h0, alpha_g, alpha_x


@dataclass(frozen=True)
class Propagation:
    """Self-loop-inclusive mean aggregation over the news graph.

    ``src``/``dst`` list every undirected edge in both directions plus one
    self-loop per node; ``inv_deg`` is ``1 / (|N(i)| + 1)`` as a column.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    inv_deg: np.ndarray

    @classmethod
    def from_global(cls, g: GlobalGraph) -> "Propagation":
        n = g.n_central
        e = g.edges
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([e[:, 0], e[:, 1], loops])
        dst = np.concatenate([e[:, 1], e[:, 0], loops])
        deg = np.bincount(dst, minlength=n).astype(np.float64)
        return cls(n, src, dst, (1.0 / deg).reshape(-1, 1))


def ggrl_layer(prop: Propagation, h: Tensor, w: Tensor, activation: str = "relu") -> Tensor:
    agg = ad.segment_sum(ad.row_gather(h, prop.src), prop.dst, prop.n)
    out = ad.matmul(ad.mul(agg, Tensor(prop.inv_deg)), w)
    if activation == "relu":
        return ad.relu(out)
    if activation == "linear":
        return out
    raise ValueError(f"unknown activation {activation!r}")


def ggrl_forward(prop: Propagation, h0: Tensor, weights: list[Tensor], activation: str = "relu") -> Tensor:
    if h0.shape[0] != prop.n:
        raise ShapeMismatch(f"ggrl: {h0.shape[0]} rows for {prop.n} central nodes")
    h = h0
    for w in weights:
        h = ggrl_layer(prop, h, w, activation)
    return h


def predict(h: Tensor, w_p: Tensor, b_p: Tensor) -> Tensor:
    """Column of risk probabilities ``sigmoid(h W_p + b_p)``."""
    if h.shape[1] != w_p.shape[0]:
        raise ShapeMismatch(f"head expects width {w_p.shape[0]}, got {h.shape[1]}")
    return ad.sigmoid(ad.linear(h, w_p, b_p))
