"""A small dense-tensor engine with tape-based reverse-mode differentiation.

All tensors are 2-D float64 arrays.  Broadcasting is limited to row vectors
``(1, n)``, column vectors ``(m, 1)`` and ``(1, 1)`` scalars.

Each thread has a current :class:`Tape`.  Ops whose inputs require gradients
append a record (output, inputs, backward closure) to it; :func:`backward`
replays the records in exact reverse order and then clears the tape.  For
parallel work, run each independent forward under its own ``with Tape():``
block and call :meth:`Tape.backward` with an explicit upstream gradient; it
returns leaf gradients instead of writing them, so the caller can merge them
in a fixed order.
"""
from __future__ import annotations

import contextlib
import json
import threading
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    BadRate,
    BadSegmentId,
    NonFiniteError,
    NonScalarLoss,
    ShapeMismatch,
)

LOG_CLAMP = 1e-12
LEAKY_SLOPE = 0.01


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_tape")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._tape = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise NonScalarLoss(f"item() on tensor of shape {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------- the tape


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._prev = None

    def __len__(self):
        return len(self.records)

    def __enter__(self):
        self._prev = getattr(_local, "tape", None)
        _local.tape = self
        return self

    def __exit__(self, *exc):
        _local.tape = self._prev
        return False

    def clear(self):
        self.records.clear()

    def backward(self, output: Tensor, grad_output: np.ndarray | None = None) -> dict[int, tuple[Tensor, np.ndarray]]:
        """Reverse pass from ``output``; returns ``{id(leaf): (leaf, grad)}``.

        Leaves are tensors that require grad but were not produced by a
        recorded op (parameters and explicit inputs).  Nothing is written to
        ``leaf.grad`` and the tape is cleared.
        """
        if grad_output is None:
            if output.data.size != 1:
                raise NonScalarLoss(f"loss must be scalar, got shape {output.shape}")
            grad_output = np.ones_like(output.data)
        grad_output = np.asarray(grad_output, dtype=np.float64)
        if grad_output.shape != output.shape:
            raise ShapeMismatch(f"upstream grad {grad_output.shape} vs output {output.shape}")
        produced = {id(out) for out, _, _ in self.records}
        grads: dict[int, np.ndarray] = {id(output): grad_output}
        leaves: dict[int, Tensor] = {}
        if id(output) not in produced and output.requires_grad:
            leaves[id(output)] = output
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for x, gx in zip(inputs, in_grads):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
                if key not in produced:
                    leaves[key] = x
        self.clear()
        return {k: (t, grads[k]) for k, t in leaves.items() if k in grads}


_local = threading.local()


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad():
    prev = getattr(_local, "no_grad", False)
    _local.no_grad = True
    try:
        yield
    finally:
        _local.no_grad = prev


def grad_enabled() -> bool:
    return not getattr(_local, "no_grad", False)


def _record(name: str, out: np.ndarray, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    # one reduction instead of an elementwise mask; nan/inf always survive the sum
    if not np.isfinite(out.sum()):
        raise NonFiniteError(f"{name} produced a non-finite value")
    needs = (not getattr(_local, "no_grad", False)) and any(x.requires_grad for x in inputs)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.name = None
    t.grad = None
    t.requires_grad = needs
    t._tape = None
    if needs:
        tape = current_tape()
        tape.records.append((t, tuple(inputs), fn))
        t._tape = tape
    return t


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d leaf`` into ``leaf.grad`` for every leaf."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    tape = loss._tape if loss._tape is not None else current_tape()
    for leaf, g in tape.backward(loss).values():
        accumulate_grad(leaf, g)


def accumulate_grad(leaf: Tensor, g: np.ndarray) -> None:
    if leaf.grad is None:
        leaf.grad = np.zeros_like(leaf.data)
    leaf.grad += g


# ---------------------------------------------------------------- helpers


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple[int, int]:
    out = []
    for da, db in zip(a, b):
        if da == db or db == 1:
            out.append(da)
        elif da == 1:
            out.append(db)
        else:
            raise ShapeMismatch(f"{op}: shapes {a} and {b} are not broadcast-compatible")
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# ------------------------------------------------------------ arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _record("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _record("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _record("add_scalar", a.data + c, (a,), lambda g: (g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _record("matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeMismatch(f"concat_cols: row counts {sorted(rows)}")
    widths = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)
    return _record("concat_cols", out, tuple(parts),
                   lambda g: tuple(g[:, widths[i]:widths[i + 1]] for i in range(len(parts))))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    cols = {p.shape[1] for p in parts}
    if len(cols) != 1:
        raise ShapeMismatch(f"concat_rows: column counts {sorted(cols)}")
    offs = np.cumsum([0] + [p.shape[0] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=0)
    return _record("concat_rows", out, tuple(parts),
                   lambda g: tuple(g[offs[i]:offs[i + 1]] for i in range(len(parts))))


def row_gather(x: Tensor, index) -> Tensor:
    """``out[i] = x[index[i]]``; backward scatters rows back with summation."""
    index = np.asarray(index, dtype=np.int64).reshape(-1)
    n = x.shape[0]
    if len(index) and (index.min() < 0 or index.max() >= n):
        raise BadSegmentId(f"row_gather index out of range [0, {n})")
    return _record("row_gather", x.data[index], (x,),
                   lambda g: (_segment_sum_np(g, index, n),))


def _segment_matrix(segments: np.ndarray, n_segments: int) -> sp.csr_matrix:
    m = len(segments)
    return sp.csr_matrix((np.ones(m), (segments, np.arange(m))), shape=(n_segments, m))


def _segment_sum_np(x: np.ndarray, segments: np.ndarray, n_segments: int) -> np.ndarray:
    if len(segments) == 0:
        return np.zeros((n_segments, x.shape[1]))
    return np.asarray(_segment_matrix(segments, n_segments) @ x)


def segment_sum(x: Tensor, segments, n_segments: int) -> Tensor:
    """Row ``s`` of the output is the sum of rows of ``x`` with segment id ``s``."""
    segments = np.asarray(segments, dtype=np.int64).reshape(-1)
    if len(segments) != x.shape[0]:
        raise ShapeMismatch(f"segment_sum: {len(segments)} ids for {x.shape[0]} rows")
    if len(segments) and (segments.min() < 0 or segments.max() >= n_segments):
        bad = segments[(segments < 0) | (segments >= n_segments)][0]
        raise BadSegmentId(f"segment id {bad} outside [0, {n_segments})")
    out = _segment_sum_np(x.data, segments, n_segments)
    return _record("segment_sum", out, (x,), lambda g: (g[segments],))


def sparse_matmul(a: sp.spmatrix, x: Tensor, a_t: sp.spmatrix | None = None) -> Tensor:
    """``a @ x`` for a constant sparse ``a``; ``a_t`` may supply a cached transpose."""
    if a.shape[1] != x.shape[0]:
        raise ShapeMismatch(f"sparse_matmul: {a.shape} @ {x.shape}")
    at = a.T.tocsr() if a_t is None else a_t
    return _record("sparse_matmul", np.asarray(a @ x.data), (x,), lambda g: (np.asarray(at @ g),))


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _record("sum", np.array([[x.data.sum()]]), (x,),
                   lambda g: (np.full(shape, g[0, 0]),))


def mean_all(x: Tensor) -> Tensor:
    shape = x.shape
    n = x.data.size
    return _record("mean", np.array([[x.data.sum() / n]]), (x,),
                   lambda g: (np.full(shape, g[0, 0] / n),))


def row_sum(x: Tensor) -> Tensor:
    shape = x.shape
    return _record("row_sum", x.data.sum(axis=1, keepdims=True), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


# ------------------------------------------------------------ elementwise


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _record("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    factor = np.where(x.data > 0, 1.0, slope)
    return _record("leaky_relu", x.data * factor, (x,), lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    # exp of a non-positive argument only, so no overflow on either tail
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow is reported by _record instead
        out = np.exp(x.data)
    return _record("exp", out, (x,), lambda g: (g * out,))


def log(x: Tensor, clamp: float = LOG_CLAMP) -> Tensor:
    """Natural log of ``max(x, clamp)``; the gradient is zero where clamped."""
    d = x.data
    safe = np.maximum(d, clamp)
    live = d >= clamp
    return _record("log", np.log(safe), (x,), lambda g: (np.where(live, g / safe, 0.0),))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    d = x.data
    live = (d >= lo) & (d <= hi)
    return _record("clip", np.clip(d, lo, hi), (x,), lambda g: (g * live,))


def softmax_pair(e1: Tensor, e2: Tensor) -> tuple[Tensor, Tensor]:
    """Row-wise two-way softmax of column vectors, stable for large gaps."""
    if e1.shape != e2.shape or e1.shape[1] != 1:
        raise ShapeMismatch(f"softmax_pair: {e1.shape} vs {e2.shape}")
    m = np.maximum(e1.data, e2.data)
    x1 = np.exp(e1.data - m)
    x2 = np.exp(e2.data - m)
    z = x1 + x2
    p1, p2 = x1 / z, x2 / z
    # both outputs go on the tape as one joint node so they backprop together
    joint = _record("softmax_pair", np.concatenate([p1, p2], axis=1), (e1, e2),
                    lambda g: _softmax_pair_grad(g, p1, p2))
    return _split_pair(joint)


def _softmax_pair_grad(g, p1, p2):
    # d p1/d e1 = p1 p2, d p1/d e2 = -p1 p2, and symmetric for p2
    s = p1 * p2 * (g[:, :1] - g[:, 1:])
    return s, -s


def _split_pair(joint: Tensor) -> tuple[Tensor, Tensor]:
    a = _record("column", joint.data[:, :1].copy(), (joint,),
                lambda g: (np.concatenate([g, np.zeros_like(g)], axis=1),))
    b = _record("column", joint.data[:, 1:].copy(), (joint,),
                lambda g: (np.concatenate([np.zeros_like(g), g], axis=1),))
    return a, b


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; identity when ``training`` is false or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise BadRate(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    mask = keep / (1.0 - rate)
    return _record("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    norm = np.maximum(np.sqrt((x.data ** 2).sum(axis=1, keepdims=True)), eps)
    y = x.data / norm

    def grad(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norm,)

    return _record("l2_normalize_rows", y, (x,), grad)


def logsumexp_rows(x: Tensor) -> Tensor:
    m = x.data.max(axis=1, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=1, keepdims=True)
    soft = e / s
    return _record("logsumexp_rows", m + np.log(s), (x,), lambda g: (g * soft,))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


# ------------------------------------------------------------ checkpoints

CHECKPOINT_META = "__meta__"


def save_params(path, params: dict[str, Tensor | np.ndarray], meta: dict | None = None) -> None:
    """Write parameters as an ``.npz`` archive.

    One float64 2-D array per parameter, stored under its dotted name, plus a
    ``__meta__`` entry holding a JSON string (model configuration etc.).
    """
    arrays = {name: np.ascontiguousarray(getattr(p, "data", p), dtype=np.float64)
              for name, p in params.items()}
    arrays[CHECKPOINT_META] = np.array(json.dumps(meta or {}, sort_keys=True))
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z[CHECKPOINT_META])) if CHECKPOINT_META in z.files else {}
        params = {k: z[k].astype(np.float64) for k in z.files if k != CHECKPOINT_META}
    return params, meta

