"""Raw structural attributes of tribe nodes.

Everything here is a pure function of a single :class:`~tribegraph.graph.Tribe`,
so tables can be computed per tribe in any order (or in parallel) and give
bit-identical results.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .exceptions import DisconnectedTribe, NoConvergence
from .graph import Tribe, undirected_edges, undirected_view

EIG_TOL = 1e-12
EIG_MAX_ITER = 200_000


@dataclass(frozen=True, eq=False)
class StructFeatureTable:
    """Per-node columns for one tribe, indexed by local node id."""

    tribe_id: int
    deg_in: np.ndarray
    deg_out: np.ndarray
    kind: np.ndarray
    spd: np.ndarray
    eig: np.ndarray

    def __len__(self):
        return len(self.kind)

    def rows(self):
        for v in range(len(self)):
            yield (self.tribe_id, v, int(self.deg_in[v]), int(self.deg_out[v]),
                   int(self.kind[v]), int(self.spd[v]), float(self.eig[v]))


def compute_spd(t: Tribe) -> np.ndarray:
    """Hop distance from the central node over the undirected view (BFS)."""
    nbrs = undirected_view(t)
    dist = np.full(t.n_nodes, -1, dtype=np.int64)
    dist[t.central] = 0
    frontier = [t.central]
    while frontier:
        nxt = []
        for v in frontier:
            for u in nbrs[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    nxt.append(int(u))
        frontier = nxt
    if np.any(dist < 0):
        raise DisconnectedTribe(
            f"tribe {t.tribe_id}: node {int(np.flatnonzero(dist < 0)[0])} unreachable"
        )
    return dist


def compute_degrees(t: Tribe) -> tuple[np.ndarray, np.ndarray]:
    """Directed ``(deg_in, deg_out)`` counted over the edge list."""
    n = t.n_nodes
    if t.n_edges == 0:
        z = np.zeros(n, dtype=np.int64)
        return z, z.copy()
    deg_out = np.bincount(t.edges[:, 0], minlength=n)
    deg_in = np.bincount(t.edges[:, 1], minlength=n)
    return deg_in, deg_out


def adjacency(t: Tribe) -> sp.csr_matrix:
    """Binary symmetric adjacency of the undirected view."""
    und = undirected_edges(t)
    n = t.n_nodes
    rows = np.concatenate([und[:, 0], und[:, 1]])
    cols = np.concatenate([und[:, 1], und[:, 0]])
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def compute_eigvec(t: Tribe, tol: float = EIG_TOL, max_iter: int = EIG_MAX_ITER) -> np.ndarray:
    """Principal eigenvector of the undirected adjacency by power iteration.

    Iterates on ``A + I``: same eigenvectors as ``A`` but the Perron
    eigenvalue strictly dominates in magnitude, which plain ``A`` lacks on
    bipartite tribes (stars, trees).  Starts from the uniform vector and stops
    once successive unit-norm iterates differ by less than ``tol`` in L-inf.
    The result has unit L2 norm and its largest-magnitude entry is
    nonnegative.  Edgeless tribes return the uniform vector.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be > 0 and max_iter >= 1")
    n = t.n_nodes
    x = np.full(n, 1.0 / np.sqrt(n))
    if t.n_edges == 0:
        return x
    a = adjacency(t)
    for _ in range(max_iter):
        y = a @ x + x
        y /= np.linalg.norm(y)
        if np.max(np.abs(y - x)) < tol:
            x = y
            break
        x = y
    else:
        raise NoConvergence(max_iter)
    k = int(np.argmax(np.abs(x)))
    if x[k] < 0:
        x = -x
    return x


def build_feature_table(t: Tribe, tol: float = EIG_TOL, max_iter: int = EIG_MAX_ITER) -> StructFeatureTable:
    deg_in, deg_out = compute_degrees(t)
    return StructFeatureTable(
        tribe_id=t.tribe_id,
        deg_in=deg_in,
        deg_out=deg_out,
        kind=t.kinds.astype(np.int64),
        spd=compute_spd(t),
        eig=compute_eigvec(t, tol, max_iter),
    )


FEATURE_COLUMNS = ("tribe_id", "local_id", "deg_in", "deg_out", "kind", "spd", "eig")
