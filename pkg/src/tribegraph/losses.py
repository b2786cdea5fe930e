"""Supervised, contrastive and combined training objectives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import BadConfig, BadProbability, BatchTooSmall, EmptyMask, ShapeMismatch


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.1
    tau: float = 0.2
    clamp_eps: float = 1e-12

    def __post_init__(self):
        if self.alpha < 0:
            raise BadConfig("alpha must be >= 0")
        if self.tau <= 0:
            raise BadConfig("tau must be > 0")
        if not 0 < self.clamp_eps < 0.5:
            raise BadConfig("clamp_eps must be in (0, 0.5)")


def bce_loss(p: Tensor, y, mask, clamp_eps: float = 1e-12) -> Tensor:
    """Mean binary cross-entropy over the rows selected by ``mask``.

    ``mask`` is a boolean vector or an index array.  Probabilities are
    clamped to ``[eps, 1 - eps]`` before taking logs.
    """
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.shape[1] != 1 or p.shape[0] != len(y):
        raise ShapeMismatch(f"bce: p {p.shape} vs {len(y)} labels")
    idx = np.asarray(mask)
    if idx.dtype == bool:
        idx = np.flatnonzero(idx)
    if len(idx) == 0:
        raise EmptyMask("bce mask selects no rows")
    pm = p.data[idx]
    if np.any(~np.isfinite(pm)) or np.any((pm < 0) | (pm > 1)):
        raise BadProbability("probabilities must lie in [0, 1]")
    ym = y[idx].reshape(-1, 1)
    if np.any((ym != 0) & (ym != 1)):
        raise ValueError("labels under the mask must be 0 or 1")
    pc = ad.clip(ad.row_gather(p, idx), clamp_eps, 1.0 - clamp_eps)
    log_p = ad.log(pc, clamp_eps)
    log_q = ad.log(ad.add_scalar(ad.scale(pc, -1.0), 1.0), clamp_eps)
    ll = ad.add(ad.mul(log_p, Tensor(ym)), ad.mul(log_q, Tensor(1.0 - ym)))
    return ad.scale(ad.mean_all(ll), -1.0)


def infonce_loss(q: Tensor, k: Tensor, tau: float = 0.2) -> Tensor:
    """InfoNCE with cosine similarity: row ``i`` of ``k`` is the positive for
    row ``i`` of ``q`` and every other row is a negative."""
    if q.shape != k.shape:
        raise ShapeMismatch(f"infonce: {q.shape} vs {k.shape}")
    if q.shape[0] < 2:
        raise BatchTooSmall(f"need at least 2 rows, got {q.shape[0]}")
    if tau <= 0:
        raise BadConfig("tau must be > 0")
    qn = ad.l2_normalize_rows(q)
    kn = ad.l2_normalize_rows(k)
    sim = ad.scale(ad.matmul(qn, ad.transpose(kn)), 1.0 / tau)
    pos = ad.scale(ad.row_sum(ad.mul(qn, kn)), 1.0 / tau)
    return ad.mean_all(ad.sub(ad.logsumexp_rows(sim), pos))


def total_loss(bce: Tensor, cl: Tensor | None, alpha: float) -> Tensor:
    if cl is None or alpha == 0:
        return bce
    return ad.add(bce, ad.scale(cl, alpha))


def contrastive_batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``0..n-1`` into batches of ``batch_size``.

    A trailing batch with fewer than two rows is folded into the previous
    one, since InfoNCE needs at least one negative.
    """
    if n < 2:
        raise BatchTooSmall(f"need at least 2 tribes for contrastive batches, got {n}")
    batch_size = max(2, int(batch_size))
    perm = rng.permutation(n)
    batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def batched_infonce(q: Tensor, k: Tensor, batches: list[np.ndarray], tau: float) -> Tensor:
    """Mean of :func:`infonce_loss` over index batches."""
    terms = [infonce_loss(ad.row_gather(q, b), ad.row_gather(k, b), tau) for b in batches]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.scale(total, 1.0 / len(terms))
