"""Shared test utilities: random inputs, brute-force oracles, finite differences."""
from __future__ import annotations

import numpy as np

from tribegraph import autodiff as ad
from tribegraph.graph import NodeKind, Tribe


def random_tribe(rng, n=None, extra_edge_p=0.1, tribe_id=0, max_n=50) -> Tribe:
    """Connected random tribe: a random spanning tree plus extra edges."""
    n = int(rng.integers(1, max_n + 1)) if n is None else n
    kinds = rng.integers(1, 3, size=n)
    kinds[0] = NodeKind.LISTED
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((v, u) if rng.random() < 0.7 else (u, v))
    for a in range(n):
        for b in range(n):
            if a != b and (a, b) not in edges and (b, a) not in edges and rng.random() < extra_edge_p / max(n, 1) * 4:
                edges.add((a, b))
    e = np.array(sorted(edges), dtype=np.int64).reshape(-1, 2)
    return Tribe(tribe_id, kinds, e, 0)


def dense_adjacency(t: Tribe) -> np.ndarray:
    a = np.zeros((t.n_nodes, t.n_nodes))
    for x, y in t.edges:
        a[x, y] = a[y, x] = 1.0
    return a


def connected(n: int, edges) -> bool:
    if n <= 1:
        return True
    nb = [[] for _ in range(n)]
    for a, b in edges:
        nb[a].append(b)
        nb[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for u in nb[v]:
            if u not in seen:
                seen.add(u)
                stack.append(u)
    return len(seen) == n


def brute_bridges(t: Tribe) -> int:
    """Count undirected edges whose removal disconnects the tribe."""
    und = sorted({(min(a, b), max(a, b)) for a, b in t.edges})
    return sum(not connected(t.n_nodes, und[:i] + und[i + 1:]) for i in range(len(und)))


def brute_clustering(t: Tribe) -> float:
    a = dense_adjacency(t)
    n = t.n_nodes
    out = []
    for v in range(n):
        nb = np.flatnonzero(a[v])
        k = len(nb)
        if k < 2:
            out.append(0.0)
            continue
        tri = sum(a[i, j] for ii, i in enumerate(nb) for j in nb[ii + 1:])
        out.append(tri / (k * (k - 1) / 2))
    return float(np.mean(out))


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / denom)


def check_op_grad(build, inputs: list[np.ndarray], h: float = 1e-6) -> float:
    """Max relative error between tape and FD gradients of ``sum(w * build(...))``.

    A fixed random weighting ``w`` makes the scalar depend on every output.
    """
    rng = np.random.default_rng(0)
    with ad.no_grad():
        shape = build(*[ad.Tensor(x) for x in inputs]).shape
    w = rng.standard_normal(shape)

    def scalar():
        with ad.no_grad():
            return float((build(*[ad.Tensor(x) for x in inputs]).data * w).sum())

    ts = [ad.Tensor(x, requires_grad=True) for x in inputs]
    with ad.Tape() as tape:
        out = build(*ts)
        loss = ad.sum_all(ad.mul(out, ad.Tensor(w)))
    grads = tape.backward(loss)
    worst = 0.0
    for t, x in zip(ts, inputs):
        analytic = grads[id(t)][1] if id(t) in grads else np.zeros_like(x)
        worst = max(worst, rel_err(analytic, fd_grad(scalar, x, h)))
    return worst


class KinkRecorder:
    """Record the on/off pattern of every piecewise-linear op during a forward.

    Central differences are not an oracle where the stencil straddles a kink
    of relu / leaky_relu / clip; comparing the patterns at ``x + h`` and
    ``x - h`` identifies exactly those entries.
    """

    OPS = ("relu", "leaky_relu", "clip")

    def __init__(self):
        self.masks: list[np.ndarray] = []
        self._orig = {}

    def __enter__(self):
        for name in self.OPS:
            f = getattr(ad, name)
            self._orig[name] = f

            def wrapped(x, *a, _f=f, _name=name, **k):
                if _name == "clip":
                    lo, hi = a[:2]
                    self.masks.append((x.data >= lo) & (x.data <= hi))
                else:
                    self.masks.append(x.data > 0)
                return _f(x, *a, **k)

            setattr(ad, name, wrapped)
        return self

    def __exit__(self, *exc):
        for name, f in self._orig.items():
            setattr(ad, name, f)
        return False

    def snapshot(self):
        out = [m.copy() for m in self.masks]
        self.masks.clear()
        return out


def _kink_err(analytic, retried, kink):
    """Worst error over kink entries re-checked with a smaller step; inf if any never fit."""
    if not kink.any():
        return 0.0
    r = retried[kink]
    if np.isnan(r).any():
        return float("inf")
    a = analytic[kink]
    return float((np.abs(a - r) / np.maximum(np.abs(a), 1e-8)).max())


def full_model_gradcheck(graph, cfg, h: float = 1e-5, seed: int = 0, retry_steps=(1e-6, 1e-7)):
    """Tape gradients of the training objective vs central differences.

    Dropout masks are keyed by ``(seed, step, view, chunk)`` and the
    contrastive batches are drawn once, so the loss is a deterministic
    function of the parameters.  Returns ``{name: GradReport}``.
    """
    from sklearn.preprocessing import StandardScaler

    from tribegraph.losses import batched_infonce, bce_loss, contrastive_batches, total_loss
    from tribegraph.model import forward_full, init_params, prepare_graph
    from tribegraph.training import split_dataset
    from tribegraph.tse import finish_backward

    mcfg = cfg.model_config()
    x = StandardScaler().fit_transform(graph.attrs)
    prep = prepare_graph(graph, mcfg, x, seed=seed)
    params = init_params(mcfg, x.shape[1], np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 1)
    for t in params.values():  # move off the zero / symmetric init so every path is live
        t.data = t.data + rng.normal(0.0, 0.1, t.shape)
    train_idx, _, _ = split_dataset(graph.labels, cfg.train_ratio, seed)
    batches = contrastive_batches(graph.n_central, cfg.cl_batch, np.random.default_rng(seed))

    def loss_value():
        out = forward_full(prep, params, mcfg, training=True, seed=seed, step=1)
        bce = bce_loss(out.prob, graph.labels, train_idx)
        cl = None
        if not (mcfg.no_cl or mcfg.no_tse):
            cl = batched_infonce(out.tribe_views[0], out.tribe_views[1], batches, cfg.tau)
        return total_loss(bce, cl, cfg.alpha), out

    for t in params.values():
        t.zero_grad()
    with ad.Tape() as tape:
        loss, out = loss_value()
    for leaf, g in tape.backward(loss).values():
        ad.accumulate_grad(leaf, g)
    finish_backward(out.pending)

    report = {}
    with KinkRecorder() as rec, ad.no_grad():
        for name, t in params.items():
            analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
            numeric = np.zeros_like(t.data)
            kink = np.zeros(t.shape, dtype=bool)
            retried = np.full(t.shape, np.nan)
            x = t.data
            for i in np.ndindex(*x.shape):
                old = x[i]
                x[i] = old + h
                fp = loss_value()[0].item()
                mp = rec.snapshot()
                x[i] = old - h
                fm = loss_value()[0].item()
                mm = rec.snapshot()
                x[i] = old
                numeric[i] = (fp - fm) / (2 * h)
                kink[i] = any(not np.array_equal(a, b) for a, b in zip(mp, mm))
                if kink[i]:
                    # retry with shrinking steps until the stencil fits on one side
                    for hh in retry_steps:
                        x[i] = old + hh
                        fp = loss_value()[0].item()
                        mp = rec.snapshot()
                        x[i] = old - hh
                        fm = loss_value()[0].item()
                        mm = rec.snapshot()
                        x[i] = old
                        if all(np.array_equal(a, b) for a, b in zip(mp, mm)):
                            retried[i] = (fp - fm) / (2 * hh)
                            break
            elem = np.abs(analytic - numeric) / np.maximum(np.abs(analytic), 1e-8)
            report[name] = GradReport(
                norm_rel_err=rel_err(analytic, numeric),
                max_elem_err=float(elem[~kink].max()) if (~kink).any() else 0.0,
                n_entries=int(x.size),
                n_kinks=int(kink.sum()),
                kink_elem_err=_kink_err(analytic, retried, kink),
            )
    return report


class GradReport:
    def __init__(self, norm_rel_err, max_elem_err, n_entries, n_kinks, kink_elem_err=0.0):
        self.norm_rel_err = norm_rel_err
        self.kink_elem_err = kink_elem_err
        self.max_elem_err = max_elem_err
        self.n_entries = n_entries
        self.n_kinks = n_kinks

    def __repr__(self):
        return (f"GradReport(elem={self.max_elem_err:.2e}, norm={self.norm_rel_err:.2e}, "
                f"kinks={self.n_kinks}/{self.n_entries}, kink_elem={self.kink_elem_err:.2e})")
