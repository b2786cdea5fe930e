"""Synthetic tribe-style graphs and the statistics used to calibrate them.

Generation
----------
Labels are drawn first (``risky_fraction``).  Each tribe then grows node by
node around its listed central company:

* with probability ``star_bias`` (per class) the new node invests directly
  in the central company.  With probability ``core_prob`` it also invests
  in up to ``core_links`` companies of the centre's core community (and, if
  it is a company, joins that core); otherwise it stays a pendant investor.
* otherwise it invests in a random non-central company already in the
  tribe, and with probability ``cross_prob`` in a second one as well.

High ``star_bias`` therefore gives hub-heavy tribes with many pendant
investors and a tight core around the centre; low ``star_bias`` gives deeper
investment chains with longer cycles.  Individuals only ever invest; they
are never an investee.

Global edges connect each pair of central nodes independently with
probability ``p_same`` (same label) or ``p_cross``.  Attributes are
``attr_signal * class_mean + (1 - attr_signal) * noise`` with orthogonal
unit class means, then discretised into ``bins`` equal-width bins per column.
"""
from __future__ import annotations

import json
from concurrent.futures import Executor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .exceptions import BadConfig, NoEdges
from .features import compute_eigvec
from .graph import GlobalGraph, NodeKind, Tribe, TribeStyleGraph, undirected_edges, undirected_view


@dataclass
class GenConfig:
    n_tribes: int = 400
    risky_fraction: float = 0.42
    tribe_size: tuple = (20, 200)
    star_bias_risky: float = 0.8
    star_bias_normal: float = 0.3
    individual_fraction_risky: float = 0.6
    individual_fraction_normal: float = 0.4
    homophily: tuple = (0.01, 0.002)
    attr_dim: int = 32
    attr_signal: float = 0.3
    bins: int = 50
    seed: int = 7
    core_prob: float = 0.5
    core_links: int = 4
    cross_prob: float = 0.6

    def __post_init__(self):
        self.tribe_size = tuple(int(x) for x in self.tribe_size)
        self.homophily = tuple(float(x) for x in self.homophily)

    def validate(self) -> "GenConfig":
        if self.n_tribes < 1:
            raise BadConfig("n_tribes must be >= 1")
        probs = {
            "risky_fraction": self.risky_fraction,
            "star_bias_risky": self.star_bias_risky,
            "star_bias_normal": self.star_bias_normal,
            "individual_fraction_risky": self.individual_fraction_risky,
            "individual_fraction_normal": self.individual_fraction_normal,
            "attr_signal": self.attr_signal,
            "core_prob": self.core_prob,
            "cross_prob": self.cross_prob,
            "p_same": self.homophily[0] if len(self.homophily) == 2 else -1,
            "p_cross": self.homophily[1] if len(self.homophily) == 2 else -1,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise BadConfig(f"{name} must be a probability, got {p}")
        if len(self.tribe_size) != 2 or not 1 <= self.tribe_size[0] <= self.tribe_size[1]:
            raise BadConfig("tribe_size must be (min, max) with 1 <= min <= max")
        if self.attr_dim < 2:
            raise BadConfig("attr_dim must be >= 2")
        if self.bins < 1:
            raise BadConfig("bins must be >= 1")
        if self.core_links < 1:
            raise BadConfig("core_links must be >= 1")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise BadConfig(f"unknown config keys: {', '.join(unknown)}")
        try:
            cfg = cls(**d)
        except (TypeError, ValueError) as exc:
            raise BadConfig(str(exc)) from None
        return cfg.validate()

    @classmethod
    def from_json(cls, path) -> "GenConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfig(f"{path}: {exc}") from None
        if not isinstance(d, dict):
            raise BadConfig(f"{path}: expected a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tribe_size"] = list(self.tribe_size)
        d["homophily"] = list(self.homophily)
        return d


def bench_small(**overrides) -> GenConfig:
    """The default desk-scale benchmark configuration."""
    return GenConfig(**overrides).validate()


def null_config(**overrides) -> GenConfig:
    """Benchmark with every label-dependent knob equalised."""
    base = dict(attr_signal=0.0, homophily=(0.006, 0.006),
                star_bias_risky=0.55, star_bias_normal=0.55,
                individual_fraction_risky=0.5, individual_fraction_normal=0.5)
    base.update(overrides)
    return GenConfig(**base).validate()


# ---------------------------------------------------------------- growth


def grow_tribe(tribe_id: int, n: int, star_bias: float, individual_fraction: float,
               cfg: GenConfig, rng: np.random.Generator) -> Tribe:
    kinds = [NodeKind.LISTED]
    edges: list[tuple[int, int]] = []
    core: list[int] = []  # companies in the centre's dense community
    companies: list[int] = []  # non-central companies (possible investees)
    for v in range(1, n):
        kind = NodeKind.INDIVIDUAL if rng.random() < individual_fraction else NodeKind.UNLISTED
        if rng.random() < star_bias or not companies:
            edges.append((v, 0))
            if rng.random() < cfg.core_prob:
                if core:
                    k = min(cfg.core_links, len(core))
                    for i in rng.choice(len(core), size=k, replace=False):
                        edges.append((v, core[i]))
                if kind != NodeKind.INDIVIDUAL:
                    core.append(v)
        else:
            u = companies[rng.integers(len(companies))]
            edges.append((v, u))
            if len(companies) > 1 and rng.random() < cfg.cross_prob:
                u2 = companies[rng.integers(len(companies))]
                if u2 != u:
                    edges.append((v, u2))
        kinds.append(kind)
        if kind != NodeKind.INDIVIDUAL:
            companies.append(v)
    return Tribe(tribe_id, np.array(kinds, dtype=np.int8),
                 np.array(edges, dtype=np.int64).reshape(-1, 2), 0)


def class_means(dim: int) -> np.ndarray:
    """Two orthogonal unit vectors: even columns for class 0, odd for class 1."""
    means = np.zeros((2, dim))
    means[0, 0::2] = 1.0
    means[1, 1::2] = 1.0
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def discretize(x: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width binning per column; returns bin indices as floats."""
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    width = np.where(hi > lo, (hi - lo) / bins, 1.0)
    idx = np.floor((x - lo) / width)
    return np.clip(idx, 0, bins - 1).astype(np.float64)


def generate(cfg: GenConfig) -> TribeStyleGraph:
    cfg.validate()
    root = np.random.SeedSequence(cfg.seed)
    label_ss, tribe_ss, edge_ss, attr_ss = root.spawn(4)
    n = cfg.n_tribes

    labels = (np.random.default_rng(label_ss).random(n) < cfg.risky_fraction).astype(np.int64)

    tribes = []
    lo, hi = cfg.tribe_size
    for i, ss in enumerate(tribe_ss.spawn(n)):
        rng = np.random.default_rng(ss)
        size = int(rng.integers(lo, hi + 1))
        if labels[i]:
            t = grow_tribe(i, size, cfg.star_bias_risky, cfg.individual_fraction_risky, cfg, rng)
        else:
            t = grow_tribe(i, size, cfg.star_bias_normal, cfg.individual_fraction_normal, cfg, rng)
        tribes.append(t)

    p_same, p_cross = cfg.homophily
    rng = np.random.default_rng(edge_ss)
    a, b = np.triu_indices(n, k=1)
    prob = np.where(labels[a] == labels[b], p_same, p_cross)
    keep = rng.random(len(a)) < prob
    gedges = np.column_stack([a[keep], b[keep]])

    rng = np.random.default_rng(attr_ss)
    noise = rng.standard_normal((n, cfg.attr_dim))
    raw = cfg.attr_signal * class_means(cfg.attr_dim)[labels] + (1.0 - cfg.attr_signal) * noise
    attrs = discretize(raw, cfg.bins)

    return TribeStyleGraph(GlobalGraph(n, gedges, attrs, labels), tribes).validate()


# ---------------------------------------------------------------- analysis


@dataclass
class TribeStats:
    degree_centrality: float
    eigenvector_centrality: float
    clustering_coefficient: float
    n_bridges: int
    central_degree: int


STAT_COLUMNS = ("degree_centrality", "eigenvector_centrality", "clustering_coefficient",
                "n_bridges", "central_degree")


def local_clustering(nbrs: list[np.ndarray]) -> np.ndarray:
    """Fraction of linked neighbour pairs per node; 0 below degree 2."""
    sets = [set(map(int, x)) for x in nbrs]
    out = np.zeros(len(nbrs))
    for v, nv in enumerate(sets):
        k = len(nv)
        if k < 2:
            continue
        links = sum(len(sets[u] & nv) for u in nv) / 2
        out[v] = links / (k * (k - 1) / 2)
    return out


def find_bridges(nbrs: list[np.ndarray]) -> list[tuple[int, int]]:
    """Bridges of a simple undirected graph (iterative Tarjan low-link)."""
    n = len(nbrs)
    disc = [-1] * n
    low = [0] * n
    bridges = []
    timer = 0
    for root in range(n):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        stack = [(root, -1, iter(nbrs[root]))]
        while stack:
            v, parent, it = stack[-1]
            advanced = False
            for u in it:
                u = int(u)
                if u == parent:
                    continue
                if disc[u] < 0:
                    disc[u] = low[u] = timer
                    timer += 1
                    stack.append((u, v, iter(nbrs[u])))
                    advanced = True
                    break
                low[v] = min(low[v], disc[u])
            if advanced:
                continue
            stack.pop()
            if parent >= 0:
                low[parent] = min(low[parent], low[v])
                if low[v] > disc[parent]:
                    bridges.append((min(parent, v), max(parent, v)))
    return sorted(bridges)


def analyze_tribe(t: Tribe) -> TribeStats:
    """Table-style centrality summary of one tribe (undirected view).

    A single-node tribe reports zeros everywhere.
    """
    n = t.n_nodes
    if n == 1:
        return TribeStats(0.0, 0.0, 0.0, 0, 0)
    nbrs = undirected_view(t)
    deg = np.array([len(x) for x in nbrs], dtype=np.float64)
    return TribeStats(
        degree_centrality=float(np.mean(deg / (n - 1))),
        eigenvector_centrality=float(np.mean(compute_eigvec(t))),
        clustering_coefficient=float(np.mean(local_clustering(nbrs))),
        n_bridges=len(find_bridges(nbrs)),
        central_degree=int(deg[t.central]),
    )


def analyze_graph(g: TribeStyleGraph, executor: Executor | None = None) -> list[TribeStats]:
    if executor is None:
        return [analyze_tribe(t) for t in g.tribes]
    return list(executor.map(analyze_tribe, g.tribes))


def class_summary(stats: list[TribeStats], labels) -> dict[int, dict[str, float]]:
    """Per-class means of every statistic over labeled tribes."""
    labels = np.asarray(labels)
    table = np.array([[getattr(s, c) for c in STAT_COLUMNS] for s in stats], dtype=np.float64)
    out = {}
    for cls in (1, 0):
        rows = table[labels == cls]
        if len(rows):
            out[cls] = dict(zip(STAT_COLUMNS, rows.mean(axis=0).tolist()))
            out[cls]["n_tribes"] = int(len(rows))
    return out


def neighbor_risk_histogram(g: TribeStyleGraph, n_bins: int = 10) -> dict[int, np.ndarray]:
    """Distribution of the risky-neighbour proportion, per class.

    For every labeled central node with at least one labeled global
    neighbour, take the fraction of those neighbours labeled risky and bin it
    into ``n_bins`` equal bins on [0, 1] (1.0 lands in the last bin).
    Each class's histogram is normalised to sum to one (all zeros if that
    class has no eligible node).
    """
    gg = g.global_graph
    if len(gg.edges) == 0:
        raise NoEdges("global graph has no edges")
    labels = gg.labels
    hist = {1: np.zeros(n_bins), 0: np.zeros(n_bins)}
    for v, nb in enumerate(gg.neighbors()):
        if labels[v] < 0:
            continue
        lab = labels[nb]
        lab = lab[lab >= 0]
        if len(lab) == 0:
            continue
        frac = float(np.mean(lab == 1))
        hist[int(labels[v])][min(int(frac * n_bins), n_bins - 1)] += 1
    for cls in hist:
        total = hist[cls].sum()
        if total:
            hist[cls] /= total
    return hist


def mass_above(hist: np.ndarray, threshold: float = 0.8) -> float:
    """Histogram mass in bins lying entirely above ``threshold``."""
    n_bins = len(hist)
    first = int(round(threshold * n_bins))
    return float(hist[first:].sum())
