"""Optimisation: Adam, dataset splits, the epoch loop and the train entry point."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import BadConfig, NonFiniteError, NonFiniteLoss, ShapeMismatch, TooFewLabels
from .losses import batched_infonce, bce_loss, contrastive_batches, total_loss
from .metrics import classification_report
from .model import ModelConfig, PreparedGraph, forward_full
from .tse import finish_backward

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Everything a ``train`` run needs; loaded from a flat JSON document."""

    lr: float = 1e-2
    weight_decay: float = 1e-4
    alpha: float = 0.1
    tau: float = 0.2
    epochs: int = 100
    hidden: int = 64
    tribe_dim: int = 64
    emb_dim: int = 16
    gin_hidden: int = 64
    gin_layers: int = 2
    global_layers: int = 2
    dropout: float = 0.1
    tribe_norm: str = "layer"
    seed: int = 0
    train_ratio: float = 0.6
    cl_batch: int = 256
    no_tse: bool = False
    no_ggrl: bool = False
    no_cl: bool = False
    no_fusion: bool = False
    no_attrs: bool = False
    no_emb: bool = False

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise BadConfig("lr must be > 0")
        if self.weight_decay < 0:
            raise BadConfig("weight_decay must be >= 0")
        if self.alpha < 0:
            raise BadConfig("alpha must be >= 0")
        if self.tau <= 0:
            raise BadConfig("tau must be > 0")
        if self.epochs < 1:
            raise BadConfig("epochs must be >= 1")
        if not 0 < self.train_ratio < 1:
            raise BadConfig("train_ratio must be in (0, 1)")
        if self.cl_batch < 2:
            raise BadConfig("cl_batch must be >= 2")
        self.model_config().validate()
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise BadConfig(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(**d)
            return cfg.validate()
        except TypeError as exc:
            raise BadConfig(str(exc)) from None

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise BadConfig(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ Adam


def adam_step(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update with L2 added to the gradient.

    Returns new ``(param, m, v)``; inputs are not modified.
    """
    if param.shape != grad.shape:
        raise ShapeMismatch(f"param {param.shape} vs grad {grad.shape}")
    if t < 1:
        raise ValueError("t must be >= 1")
    b1, b2 = betas
    g = grad + weight_decay * param
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), m, v


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.t += 1
        for k, p in self.params.items():
            p.data, self.m[k], self.v[k] = adam_step(
                p.data, p.grad, self.m[k], self.v[k], self.t,
                self.lr, self.weight_decay, self.betas, self.eps)


# ------------------------------------------------------------------ splits


def split_dataset(labels, train_ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified shuffle split of the labeled nodes.

    Each class contributes ``round(train_ratio * n_class)`` nodes to train;
    the rest of each class is halved into validation and test (the odd one
    out goes to test).  Returned index arrays are sorted.
    """
    labels = np.asarray(labels).reshape(-1)
    labeled = np.flatnonzero(labels >= 0)
    if len(labeled) < 10:
        raise TooFewLabels(f"need at least 10 labeled nodes, got {len(labeled)}")
    if not 0 < train_ratio < 1:
        raise BadConfig("train_ratio must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in (0, 1):
        idx = labeled[labels[labeled] == cls]
        idx = idx[rng.permutation(len(idx))]
        n_train = int(round(train_ratio * len(idx)))
        rest = idx[n_train:]
        n_val = len(rest) // 2
        train.append(idx[:n_train])
        val.append(rest[:n_val])
        test.append(rest[n_val:])
    return tuple(np.sort(np.concatenate(part)) for part in (train, val, test))


# ------------------------------------------------------------------ loop


@dataclass
class EpochRecord:
    epoch: int
    bce: float
    cl: float
    total: float
    val_auc: float
    val_f1: float


def _eval_probs(prep: PreparedGraph, params: dict[str, Tensor], cfg: ModelConfig, executor) -> np.ndarray:
    with ad.no_grad():
        out = forward_full(prep, params, cfg, training=False, executor=executor)
    return out.prob.data[:, 0].copy()


def _epoch(prep, params, mcfg, cfg, opt, epoch, train_idx, val_idx, use_cl, cl_rng, executor):
    """One Adam step plus validation scoring; returns scalar losses and val metrics."""
    labels = prep.labels
    opt.zero_grad()
    with ad.Tape() as tape:
        out = forward_full(prep, params, mcfg, training=True, seed=cfg.seed,
                           step=epoch, executor=executor)
        bce = bce_loss(out.prob, np.where(labels >= 0, labels, 0), train_idx)
        cl = None
        if use_cl:
            batches = contrastive_batches(prep.n, cfg.cl_batch, cl_rng)
            cl = batched_infonce(out.tribe_views[0], out.tribe_views[1], batches, cfg.tau)
        loss = total_loss(bce, cl, cfg.alpha)
    if not np.isfinite(loss.item()):
        raise NonFiniteError(f"loss is {loss.item()}")
    for leaf, g in tape.backward(loss).values():
        ad.accumulate_grad(leaf, g)
    if out.pending:
        finish_backward(out.pending, executor)
    opt.step()
    for p in params.values():
        if not np.isfinite(p.data.sum()):
            raise NonFiniteError("parameter update produced non-finite values")

    val_auc = val_f1 = float("nan")
    if val_idx is not None:
        probs = _eval_probs(prep, params, mcfg, executor)
        rep = classification_report(probs[val_idx], labels[val_idx])
        val_auc, val_f1 = rep["auc"], rep["f1"]
    return loss.item(), bce.item(), (cl.item() if cl is not None else 0.0), val_auc, val_f1


def fit_params(
    prep: PreparedGraph,
    params: dict[str, Tensor],
    cfg: TrainConfig,
    train_idx: np.ndarray,
    val_idx: np.ndarray | None = None,
    executor: Executor | None = None,
) -> tuple[dict[str, np.ndarray], list[EpochRecord], int]:
    """Run the epoch loop; return best-validation-AUC parameters.

    One full-graph Adam step per epoch.  The loss is BCE on ``train_idx``
    plus ``alpha`` times InfoNCE averaged over shuffled tribe batches.
    Without validation nodes the last epoch wins.
    """
    mcfg = cfg.model_config()
    if cfg.alpha == 0:
        mcfg.no_cl = True
    use_cl = not (mcfg.no_tse or mcfg.no_cl)
    opt = Adam(params, cfg.lr, cfg.weight_decay)
    history: list[EpochRecord] = []
    best_auc, best_epoch = -np.inf, 0
    best = {k: p.data.copy() for k, p in params.items()}
    cl_rng = np.random.default_rng([cfg.seed, 1])
    has_val = val_idx is not None and len(val_idx) > 0
    for epoch in range(1, cfg.epochs + 1):
        try:
            # overflow is reported as NonFiniteError by the ops themselves
            with np.errstate(over="ignore", invalid="ignore"):
                loss, bce, cl, val_auc, val_f1 = _epoch(
                    prep, params, mcfg, cfg, opt, epoch, train_idx, val_idx if has_val else None,
                    use_cl, cl_rng, executor)
        except NonFiniteError as exc:
            raise NonFiniteLoss(f"epoch {epoch}: {exc}") from None
        rec = EpochRecord(epoch, bce, cl, loss, val_auc, val_f1)
        history.append(rec)
        logger.debug("epoch %d bce %.4f cl %.4f val_auc %.4f", epoch, rec.bce, rec.cl, val_auc)
        if not has_val or val_auc > best_auc:
            best_auc, best_epoch = (val_auc if has_val else best_auc), epoch
            best = {k: p.data.copy() for k, p in params.items()}
    if best_epoch == 0:
        # validation AUC was undefined throughout (one-class validation set)
        best_epoch = cfg.epochs
        best = {k: p.data.copy() for k, p in params.items()}
    return best, history, best_epoch


# ------------------------------------------------------------------ entry


@dataclass
class MetricsReport:
    f1: float
    auc: float
    precision: float
    recall: float
    accuracy: float
    best_epoch: int
    history: list[EpochRecord]
    split_sizes: dict

    def to_json_dict(self) -> dict:
        return {
            "f1": self.f1,
            "auc": self.auc,
            "precision": self.precision,
            "recall": self.recall,
            "accuracy": self.accuracy,
            "best_epoch": self.best_epoch,
            "split_sizes": self.split_sizes,
        }


def train(graph, cfg: TrainConfig, threads: int = 1):
    """Split, fit, and report test metrics at the best validation checkpoint.

    Returns ``(classifier, MetricsReport)``; the fitted classifier holds the
    parameters in ``params_``.
    """
    from .estimator import TribeRiskClassifier

    cfg.validate()
    train_idx, val_idx, test_idx = split_dataset(graph.labels, cfg.train_ratio, cfg.seed)
    clf = TribeRiskClassifier.from_train_config(cfg, threads=threads)
    clf.fit(graph, train_index=train_idx, val_index=val_idx)
    probs = clf.predict_proba(graph)[:, 1]
    rep = classification_report(probs[test_idx], graph.labels[test_idx])
    report = MetricsReport(
        best_epoch=clf.best_epoch_,
        history=clf.history_,
        split_sizes={"train": len(train_idx), "val": len(val_idx), "test": len(test_idx)},
        **rep,
    )
    return clf, report


def write_history_csv(history: list[EpochRecord], path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "bce", "cl", "total", "val_auc", "val_f1"])
        for r in history:
            w.writerow([r.epoch, repr(r.bce), repr(r.cl), repr(r.total), repr(r.val_auc), repr(r.val_f1)])
