"""Tribe-style graph data model, validation and CSV directory I/O.

A :class:`TribeStyleGraph` pairs a global graph over listed (central)
companies with one tribe per central node.  Tribes keep their own local id
space; nothing is merged into a single global node index.

Directory layout written by :func:`save_graph` / read by :func:`load_graph`::

    global_nodes.csv   central_id,label            (label -1 = unlabeled)
    global_edges.csv   src,dst                     (undirected)
    attrs.csv          central_id,f0,...,f{D-1}
    tribe_nodes.csv    tribe_id,local_id,kind,is_central
    tribe_edges.csv    tribe_id,src_local,dst_local (investor -> investee)
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import InvariantViolation, MissingFile, ParseError

__all__ = [
    "NodeKind",
    "Tribe",
    "GlobalGraph",
    "TribeStyleGraph",
    "undirected_view",
    "undirected_edges",
    "load_graph",
    "save_graph",
]

GRAPH_FILES = (
    "global_nodes.csv",
    "global_edges.csv",
    "attrs.csv",
    "tribe_nodes.csv",
    "tribe_edges.csv",
)


class NodeKind(enum.IntEnum):
    LISTED = 0
    UNLISTED = 1
    INDIVIDUAL = 2


@dataclass(frozen=True, eq=False)
class Tribe:
    """One investment graph. Local node ids are ``0..n_nodes-1``.

    ``edges`` is an ``(m, 2)`` integer array of directed pairs
    ``(investor, investee)``.
    """

    tribe_id: int
    kinds: np.ndarray
    edges: np.ndarray
    central: int

    def __post_init__(self):
        kinds = np.asarray(self.kinds, dtype=np.int8).reshape(-1)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        kinds.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "tribe_id", int(self.tribe_id))
        object.__setattr__(self, "central", int(self.central))

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def validate(self) -> None:
        """Raise :class:`InvariantViolation` naming the first broken rule."""
        n = self.n_nodes
        where = f"tribe {self.tribe_id}"
        if n == 0:
            raise InvariantViolation(f"{where}: no nodes")
        if np.any((self.kinds < 0) | (self.kinds > 2)):
            raise InvariantViolation(f"{where}: unknown node kind")
        listed = np.flatnonzero(self.kinds == NodeKind.LISTED)
        if len(listed) != 1:
            raise InvariantViolation(
                f"{where}: expected exactly one listed company, found {len(listed)}"
            )
        if not 0 <= self.central < n:
            raise InvariantViolation(f"{where}: central id {self.central} out of range")
        if listed[0] != self.central:
            raise InvariantViolation(
                f"{where}: central node {self.central} is not the listed company"
            )
        if self.n_edges:
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise InvariantViolation(f"{where}: edge endpoint out of range")
            loops = self.edges[:, 0] == self.edges[:, 1]
            if loops.any():
                v = int(self.edges[loops][0, 0])
                raise InvariantViolation(f"{where}: self-loop on node {v}")
            keys = self.edges[:, 0] * n + self.edges[:, 1]
            if len(np.unique(keys)) != len(keys):
                raise InvariantViolation(f"{where}: duplicate directed edge")
        seen = _bfs_order(undirected_view(self), self.central)
        if len(seen) != n:
            missing = sorted(set(range(n)) - set(seen))[0]
            raise InvariantViolation(
                f"{where}: node {missing} is not connected to the central node"
            )

    def permuted(self, perm: np.ndarray) -> "Tribe":
        """Relabel node ``v`` as ``perm[v]``."""
        perm = np.asarray(perm, dtype=np.int64)
        kinds = np.empty_like(self.kinds)
        kinds[perm] = self.kinds
        return Tribe(self.tribe_id, kinds, perm[self.edges], int(perm[self.central]))

    def __eq__(self, other):
        if not isinstance(other, Tribe):
            return NotImplemented
        return (
            self.tribe_id == other.tribe_id
            and self.central == other.central
            and np.array_equal(self.kinds, other.kinds)
            and np.array_equal(self.edges, other.edges)
        )


@dataclass(frozen=True, eq=False)
class GlobalGraph:
    """News graph over central nodes with their attributes and labels.

    ``labels`` holds 0/1, or -1 for an unlabeled node.  Edges are stored
    deduplicated as sorted ``(a, b)`` rows with ``a < b``.
    """

    n_central: int
    edges: np.ndarray
    attrs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(edges):
            edges = np.sort(edges, axis=1)
            edges = np.unique(edges, axis=0)
        attrs = np.asarray(self.attrs, dtype=np.float64)
        if attrs.ndim == 1:
            attrs = attrs.reshape(-1, 1) if len(attrs) else attrs.reshape(int(self.n_central), 0)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        for arr in (edges, attrs, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "n_central", int(self.n_central))
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "attrs", attrs)
        object.__setattr__(self, "labels", labels)

    @property
    def n_attrs(self) -> int:
        return self.attrs.shape[1]

    def validate(self) -> None:
        n = self.n_central
        if n < 1:
            raise InvariantViolation("global graph has no central nodes")
        if len(self.edges):
            if self.edges.min() < 0 or self.edges.max() >= n:
                raise InvariantViolation("global edge endpoint out of range")
            if np.any(self.edges[:, 0] == self.edges[:, 1]):
                a = int(self.edges[self.edges[:, 0] == self.edges[:, 1]][0, 0])
                raise InvariantViolation(f"global self-loop on central node {a}")
        if self.attrs.shape[0] != n:
            raise InvariantViolation(
                f"attrs has {self.attrs.shape[0]} rows, expected {n}"
            )
        if not np.all(np.isfinite(self.attrs)):
            row = int(np.argwhere(~np.isfinite(self.attrs))[0, 0])
            raise InvariantViolation(f"non-finite attribute for central node {row}")
        if len(self.labels) != n:
            raise InvariantViolation(f"labels has {len(self.labels)} entries, expected {n}")
        if np.any((self.labels < -1) | (self.labels > 1)):
            raise InvariantViolation("labels must be 0, 1 or -1 (unlabeled)")

    def neighbors(self) -> list[np.ndarray]:
        nbrs: list[list[int]] = [[] for _ in range(self.n_central)]
        for a, b in self.edges:
            nbrs[a].append(int(b))
            nbrs[b].append(int(a))
        return [np.array(sorted(x), dtype=np.int64) for x in nbrs]

    def degree(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n_central)

    def __eq__(self, other):
        if not isinstance(other, GlobalGraph):
            return NotImplemented
        return (
            self.n_central == other.n_central
            and np.array_equal(self.edges, other.edges)
            and self.attrs.shape == other.attrs.shape
            and np.array_equal(self.attrs, other.attrs)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True, eq=False)
class TribeStyleGraph:
    global_graph: GlobalGraph
    tribes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "tribes", tuple(self.tribes))

    @property
    def n_central(self) -> int:
        return self.global_graph.n_central

    @property
    def labels(self) -> np.ndarray:
        return self.global_graph.labels

    @property
    def attrs(self) -> np.ndarray:
        return self.global_graph.attrs

    def validate(self) -> "TribeStyleGraph":
        self.global_graph.validate()
        if len(self.tribes) != self.n_central:
            raise InvariantViolation(
                f"{len(self.tribes)} tribes for {self.n_central} central nodes"
            )
        for i, t in enumerate(self.tribes):
            if t.tribe_id != i:
                raise InvariantViolation(f"tribes[{i}] has tribe_id {t.tribe_id}")
            t.validate()
        return self

    def __eq__(self, other):
        if not isinstance(other, TribeStyleGraph):
            return NotImplemented
        return self.global_graph == other.global_graph and self.tribes == other.tribes


def undirected_edges(t: Tribe) -> np.ndarray:
    """Unique undirected edges of a tribe as sorted ``(a, b)`` rows, ``a < b``."""
    if t.n_edges == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.sort(t.edges, axis=1), axis=0)


def undirected_view(t: Tribe) -> list[np.ndarray]:
    """Symmetric, deduplicated neighbor lists (sorted) for every local node."""
    und = undirected_edges(t)
    n = t.n_nodes
    both = np.concatenate([und, und[:, ::-1]]) if len(und) else und
    order = np.lexsort((both[:, 1], both[:, 0])) if len(both) else np.zeros(0, dtype=np.int64)
    both = both[order]
    counts = np.bincount(both[:, 0], minlength=n) if len(both) else np.zeros(n, dtype=np.int64)
    return np.split(both[:, 1], np.cumsum(counts)[:-1])


def _bfs_order(nbrs: list[np.ndarray], source: int) -> list[int]:
    seen = {source}
    order = [source]
    head = 0
    while head < len(order):
        v = order[head]
        head += 1
        for u in nbrs[v]:
            u = int(u)
            if u not in seen:
                seen.add(u)
                order.append(u)
    return order


# --------------------------------------------------------------------- I/O


def save_graph(g: TribeStyleGraph, dir_path) -> None:
    """Write ``g`` into ``dir_path`` (created if needed). Raises ``OSError``."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    gg = g.global_graph
    _write_csv(
        d / "global_nodes.csv",
        ["central_id", "label"],
        ([i, int(y)] for i, y in enumerate(gg.labels)),
    )
    _write_csv(d / "global_edges.csv", ["src", "dst"], (list(map(int, e)) for e in gg.edges))
    _write_csv(
        d / "attrs.csv",
        ["central_id"] + [f"f{j}" for j in range(gg.n_attrs)],
        ([i] + [repr(float(v)) for v in row] for i, row in enumerate(gg.attrs)),
    )
    _write_csv(
        d / "tribe_nodes.csv",
        ["tribe_id", "local_id", "kind", "is_central"],
        (
            [t.tribe_id, v, int(k), int(v == t.central)]
            for t in g.tribes
            for v, k in enumerate(t.kinds)
        ),
    )
    _write_csv(
        d / "tribe_edges.csv",
        ["tribe_id", "src_local", "dst_local"],
        ([t.tribe_id, int(a), int(b)] for t in g.tribes for a, b in t.edges),
    )


def _write_csv(path: Path, header: list[str], rows: Iterable[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _read_csv(path: Path, expected: list[str] | None, int_cols: int | None = None):
    """Yield ``(line_no, row)`` with ``row`` parsed to numbers.

    The first ``int_cols`` columns are parsed as ints, the rest as floats.
    """
    if not path.is_file():
        raise MissingFile(str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(path.name, 1, "empty file (header row required)") from None
        header = [h.strip() for h in header]
        if expected is not None and header != expected:
            raise ParseError(path.name, 1, f"expected header {','.join(expected)}")
        n_int = len(header) if int_cols is None else int_cols
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path.name, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                vals = [int(c) for c in row[:n_int]] + [float(c) for c in row[n_int:]]
            except ValueError as exc:
                raise ParseError(path.name, line, str(exc)) from None
            yield line, vals, header


def load_graph(dir_path) -> TribeStyleGraph:
    """Read and validate a graph directory written by :func:`save_graph`."""
    d = Path(dir_path)
    if not d.is_dir():
        raise MissingFile(str(d))
    for name in GRAPH_FILES:
        if not (d / name).is_file():
            raise MissingFile(str(d / name))

    labels: dict[int, int] = {}
    for line, (cid, y), _ in _read_csv(d / "global_nodes.csv", ["central_id", "label"]):
        if cid in labels:
            raise ParseError("global_nodes.csv", line, f"duplicate central_id {cid}")
        if y not in (-1, 0, 1):
            raise ParseError("global_nodes.csv", line, f"label {y} not in {{-1,0,1}}")
        labels[cid] = y
    n = len(labels)
    if sorted(labels) != list(range(n)):
        raise InvariantViolation("global_nodes.csv: central ids must be 0..N-1")

    edges = []
    for line, (a, b), _ in _read_csv(d / "global_edges.csv", ["src", "dst"]):
        if not (0 <= a < n and 0 <= b < n):
            raise InvariantViolation(f"global_edges.csv line {line}: endpoint out of range")
        if a == b:
            raise InvariantViolation(f"global_edges.csv line {line}: self-loop on {a}")
        edges.append((a, b))

    attr_rows: dict[int, list[float]] = {}
    width = None
    for line, vals, header in _read_csv(d / "attrs.csv", None, int_cols=1):
        if header[0] != "central_id" or header[1:] != [f"f{j}" for j in range(len(header) - 1)]:
            raise ParseError("attrs.csv", 1, "expected header central_id,f0..f{D-1}")
        width = len(header) - 1
        cid = vals[0]
        if cid in attr_rows:
            raise ParseError("attrs.csv", line, f"duplicate central_id {cid}")
        if not 0 <= cid < n:
            raise InvariantViolation(f"attrs.csv line {line}: central_id {cid} out of range")
        attr_rows[cid] = vals[1:]
    if len(attr_rows) != n:
        missing = sorted(set(range(n)) - set(attr_rows))
        raise InvariantViolation(f"attrs.csv: no attributes for central node {missing[0]}")
    if width is None:
        width = 0
    attrs = np.array([attr_rows[i] for i in range(n)], dtype=np.float64).reshape(n, width)

    kinds: dict[int, dict[int, int]] = {}
    centrals: dict[int, list[int]] = {}
    for line, (tid, lid, kind, is_c), _ in _read_csv(
        d / "tribe_nodes.csv", ["tribe_id", "local_id", "kind", "is_central"]
    ):
        if not 0 <= tid < n:
            raise InvariantViolation(f"tribe_nodes.csv line {line}: tribe_id {tid} out of range")
        if kind not in (0, 1, 2):
            raise ParseError("tribe_nodes.csv", line, f"kind {kind} not in {{0,1,2}}")
        if is_c not in (0, 1):
            raise ParseError("tribe_nodes.csv", line, f"is_central {is_c} not in {{0,1}}")
        nodes = kinds.setdefault(tid, {})
        if lid in nodes:
            raise InvariantViolation(f"tribe_nodes.csv line {line}: duplicate node {lid} in tribe {tid}")
        nodes[lid] = kind
        if is_c:
            centrals.setdefault(tid, []).append(lid)

    tedges: dict[int, list[tuple[int, int]]] = {}
    for line, (tid, a, b), _ in _read_csv(
        d / "tribe_edges.csv", ["tribe_id", "src_local", "dst_local"]
    ):
        if tid not in kinds:
            raise InvariantViolation(f"tribe_edges.csv line {line}: unknown tribe {tid}")
        if a not in kinds[tid] or b not in kinds[tid]:
            raise InvariantViolation(f"tribe_edges.csv line {line}: unknown node in tribe {tid}")
        tedges.setdefault(tid, []).append((a, b))

    tribes = []
    for tid in range(n):
        if tid not in kinds:
            raise InvariantViolation(f"tribe {tid} has no nodes")
        nodes = kinds[tid]
        if sorted(nodes) != list(range(len(nodes))):
            raise InvariantViolation(f"tribe {tid}: local ids must be 0..n-1")
        cs = centrals.get(tid, [])
        if len(cs) != 1:
            raise InvariantViolation(f"tribe {tid}: expected one central node, found {len(cs)}")
        tribes.append(
            Tribe(
                tid,
                np.array([nodes[i] for i in range(len(nodes))]),
                np.array(tedges.get(tid, []), dtype=np.int64).reshape(-1, 2),
                cs[0],
            )
        )

    gg = GlobalGraph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), attrs,
                     np.array([labels[i] for i in range(n)]))
    return TribeStyleGraph(gg, tribes).validate()

