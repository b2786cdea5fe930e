"""scikit-learn style classifier wrapping the hierarchical tribe model.

The estimator is transductive: ``X`` is a whole
:class:`~tribegraph.graph.TribeStyleGraph` and predictions come back for
every central node.  Which nodes supervise training is chosen with
``train_index`` (default: every labeled node).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from .autodiff import Tensor
from .graph import TribeStyleGraph
from .metrics import compute_auc
from .model import ModelConfig, PreparedGraph, feature_tables, forward_full, init_params, prepare_graph
from .training import TrainConfig, fit_params

__all__ = ["TribeRiskClassifier", "check_graph", "check_index"]


def check_graph(X) -> TribeStyleGraph:
    """Type-check and validate a graph input."""
    if not isinstance(X, TribeStyleGraph):
        raise TypeError(f"expected a TribeStyleGraph, got {type(X).__name__}")
    return X.validate()


def check_index(index, n: int, name: str = "index") -> np.ndarray:
    idx = np.asarray(index)
    if idx.dtype == bool:
        if len(idx) != n:
            raise ValueError(f"{name}: boolean mask of length {len(idx)} for {n} nodes")
        idx = np.flatnonzero(idx)
    idx = idx.astype(np.int64).reshape(-1)
    if len(idx) and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"{name}: entries must be in [0, {n})")
    return idx


class TribeRiskClassifier(ClassifierMixin, BaseEstimator):
    """Binary risk classifier over the central nodes of a tribe-style graph.

    Parameters mirror :class:`~tribegraph.training.TrainConfig`; ``threads``
    sets the tribe-encoding worker pool and does not change results.

    Attributes
    ----------
    params_ : dict of str -> ndarray
        Parameters from the epoch with the best validation AUC.
    history_ : list of EpochRecord
    best_epoch_ : int
    scaler_ : StandardScaler fitted on the central-node attributes.
    classes_ : ndarray, always ``[0, 1]``.
    """

    def __init__(self, lr=1e-2, weight_decay=1e-4, alpha=0.1, tau=0.2, epochs=100,
                 hidden=64, tribe_dim=64, emb_dim=16, gin_hidden=64, gin_layers=2,
                 global_layers=2, dropout=0.1, tribe_norm="layer", cl_batch=256, seed=0,
                 no_tse=False, no_ggrl=False, no_cl=False, no_fusion=False,
                 no_attrs=False, no_emb=False, threads=1):
        self.lr = lr
        self.weight_decay = weight_decay
        self.alpha = alpha
        self.tau = tau
        self.epochs = epochs
        self.hidden = hidden
        self.tribe_dim = tribe_dim
        self.emb_dim = emb_dim
        self.gin_hidden = gin_hidden
        self.gin_layers = gin_layers
        self.global_layers = global_layers
        self.dropout = dropout
        self.tribe_norm = tribe_norm
        self.cl_batch = cl_batch
        self.seed = seed
        self.no_tse = no_tse
        self.no_ggrl = no_ggrl
        self.no_cl = no_cl
        self.no_fusion = no_fusion
        self.no_attrs = no_attrs
        self.no_emb = no_emb
        self.threads = threads

    @classmethod
    def from_train_config(cls, cfg: TrainConfig, threads: int = 1) -> "TribeRiskClassifier":
        d = asdict(cfg)
        d.pop("train_ratio")
        return cls(**d, threads=threads)

    def train_config(self) -> TrainConfig:
        params = self.get_params()
        params.pop("threads")
        return TrainConfig(**params).validate()

    def model_config(self) -> ModelConfig:
        return self.train_config().model_config()

    @contextmanager
    def _executor(self):
        if self.threads and self.threads > 1:
            with ThreadPoolExecutor(max_workers=int(self.threads)) as ex:
                yield ex
        else:
            yield None

    def _prepare(self, X: TribeStyleGraph, executor) -> PreparedGraph:
        cache = getattr(self, "_prep_cache", None)
        if cache is not None and cache[0] is X:
            return cache[1]
        cfg = self.model_config()
        if X.attrs.shape[1] != self.n_features_in_:
            raise ValueError(f"graph has {X.attrs.shape[1]} attributes, fitted on {self.n_features_in_}")
        x = self.scaler_.transform(X.attrs) if X.attrs.shape[1] else X.attrs
        tables = None if cfg.no_tse else feature_tables(X, executor)
        prep = prepare_graph(X, cfg, x, seed=self.seed, tables=tables, executor=executor)
        self._prep_cache = (X, prep)
        return prep

    def fit(self, X, y=None, *, train_index=None, val_index=None):
        """Train on the labeled nodes in ``train_index``.

        ``y`` overrides the graph's labels (``-1`` = unlabeled).  When
        ``val_index`` is given the returned parameters are those of the
        epoch with the highest validation AUC.
        """
        X = check_graph(X)
        cfg = self.train_config()
        labels = np.asarray(X.labels if y is None else y).reshape(-1)
        if len(labels) != X.n_central:
            raise ValueError(f"y has {len(labels)} entries for {X.n_central} central nodes")
        if train_index is None:
            train_index = np.flatnonzero(labels >= 0)
        train_index = check_index(train_index, X.n_central, "train_index")
        if np.any(labels[train_index] < 0):
            raise ValueError("train_index contains unlabeled nodes")
        if val_index is not None:
            val_index = check_index(val_index, X.n_central, "val_index")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.attrs.shape[1]
        self.scaler_ = StandardScaler().fit(X.attrs) if X.attrs.shape[1] else None
        self._prep_cache = None
        rng = np.random.default_rng([self.seed, 0])
        params = init_params(cfg.model_config(), self.n_features_in_, rng)
        with self._executor() as ex:
            prep = self._prepare(X, ex)
            if y is not None:
                prep = PreparedGraph(prep.n, prep.batches, prep.x, prep.prop, labels)
            best, history, best_epoch = fit_params(prep, params, cfg, train_index, val_index, ex)
        self.params_ = best
        self.history_ = history
        self.best_epoch_ = best_epoch
        return self

    def _tensors(self) -> dict[str, Tensor]:
        return {k: Tensor(v) for k, v in self.params_.items()}

    def _forward(self, X):
        check_is_fitted(self, "params_")
        X = check_graph(X)
        with self._executor() as ex, ad.no_grad():
            prep = self._prepare(X, ex)
            return forward_full(prep, self._tensors(), self.model_config(), training=False, executor=ex)

    def predict_proba(self, X) -> np.ndarray:
        p = self._forward(X).prob.data[:, 0]
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(np.int64)

    def transform(self, X) -> np.ndarray:
        """Eval-mode tribe representations, one row per central node."""
        check_is_fitted(self, "params_")
        if self.no_tse:
            raise ValueError("no tribe representations: fitted with no_tse=True")
        out = self._forward(X)
        return out.tribe_views[0].data.copy()

    def attention_weights(self, X) -> np.ndarray | None:
        out = self._forward(X)
        if out.alpha_g is None:
            return None
        return np.column_stack([out.alpha_g.data[:, 0], out.alpha_x.data[:, 0]])

    def score(self, X, y=None, sample_weight=None):
        """ROC AUC on labeled nodes (``y`` overrides the graph's labels)."""
        labels = np.asarray(X.labels if y is None else y).reshape(-1)
        mask = labels >= 0
        return compute_auc(self.predict_proba(X)[mask, 1], labels[mask])

    # checkpoint round trip
    def save(self, path, extra: dict | None = None) -> None:
        """Write a checkpoint; ``extra`` is stored verbatim in the metadata."""
        check_is_fitted(self, "params_")
        meta = {
            "estimator": self.get_params(),
            "n_features_in": int(self.n_features_in_),
            "best_epoch": int(self.best_epoch_),
            "scaler_mean": None if self.scaler_ is None else self.scaler_.mean_.tolist(),
            "scaler_scale": None if self.scaler_ is None else self.scaler_.scale_.tolist(),
            "extra": extra or {},
        }
        ad.save_params(path, self.params_, meta)

    @classmethod
    def load(cls, path) -> "TribeRiskClassifier":
        params, meta = ad.load_params(path)
        clf = cls(**meta["estimator"])
        clf.params_ = params
        clf.classes_ = np.array([0, 1])
        clf.n_features_in_ = meta["n_features_in"]
        clf.best_epoch_ = meta.get("best_epoch", 0)
        clf.history_ = []
        clf.checkpoint_extra_ = meta.get("extra", {})
        if meta.get("scaler_mean") is None:
            clf.scaler_ = None
        else:
            sc = StandardScaler()
            sc.mean_ = np.array(meta["scaler_mean"])
            sc.scale_ = np.array(meta["scaler_scale"])
            sc.var_ = sc.scale_ ** 2
            sc.n_features_in_ = len(sc.mean_)
            sc.n_samples_seen_ = 0
            clf.scaler_ = sc
        return clf
