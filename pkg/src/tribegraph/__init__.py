"""Hierarchical graph learning on tribe-style graphs.

Core entry points::

    from tribegraph import generate, GenConfig, TribeRiskClassifier
    g = generate(GenConfig(seed=7))
    clf = TribeRiskClassifier(epochs=50).fit(g)
"""
from .datagen import GenConfig, analyze_tribe, generate, neighbor_risk_histogram
from .estimator import TribeRiskClassifier
from .exceptions import DataError, NumericalError
from .features import StructFeatureTable, build_feature_table
from .graph import GlobalGraph, NodeKind, Tribe, TribeStyleGraph, load_graph, save_graph
from .metrics import compute_auc, compute_f1
from .training import TrainConfig, split_dataset, train

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "GenConfig",
    "GlobalGraph",
    "NodeKind",
    "NumericalError",
    "StructFeatureTable",
    "TrainConfig",
    "Tribe",
    "TribeRiskClassifier",
    "TribeStyleGraph",
    "analyze_tribe",
    "build_feature_table",
    "compute_auc",
    "compute_f1",
    "generate",
    "load_graph",
    "neighbor_risk_histogram",
    "save_graph",
    "split_dataset",
    "train",
]
