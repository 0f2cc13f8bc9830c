"""Minimal dense-tensor engine with reverse-mode gradient recording.

Covers exactly the operation closure the detector model needs: matrix
products (dense and sparse-times-dense), elementwise arithmetic, row
gathering/concatenation, stable softmax / log-sum-exp / cross-entropy,
row normalization, and per-node batched matrix-vector products for the
weight-generating network.

Numerics policy: tensors are float32 by default, every reduction
(matmul contractions included) accumulates in float64 before casting
back. Tests may build float64 tensors; ops preserve the input dtype.
The same forward code therefore serves both the 32-bit production path
and the 64-bit finite-difference oracle path.

A `Tape` records primitive applications in topological order; `backward`
walks it once in reverse. One tape per training step, single-threaded.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand shapes incompatible with a primitive."""


def _shape_error(op: str, *shapes) -> ShapeError:
    return ShapeError(f"{op}: incompatible shapes " + " vs ".join(str(s) for s in shapes))


_ids = itertools.count()


class Tensor:
    """Dense array plus gradient-recording metadata."""

    __slots__ = ("data", "requires_grad", "tid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.tid = next(_ids)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, rg={self.requires_grad})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


@dataclass
class _Node:
    op: str
    out_tid: int
    out_shape: tuple
    parents: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of primitive applications (parents always precede)."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def watch(self, t: Tensor) -> None:
        if t.requires_grad and t.tid not in self._leaf_ids:
            self._leaf_ids.add(t.tid)
            self._leaves.append(t)

    def dump(self) -> str:
        """Human-readable listing of the recorded graph, for debugging."""
        lines = []
        for k, node in enumerate(self.nodes):
            parents = ",".join(f"t{p.tid}" for p in node.parents)
            lines.append(f"{k:4d}  t{node.out_tid} = {node.op}({parents})  shape={node.out_shape}")
        return "\n".join(lines)


_TAPES: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def _record(op: str, out: Tensor, parents: Sequence[Tensor], vjp) -> Tensor:
    tape = _active_tape()
    if tape is None or not any(p.requires_grad for p in parents):
        return out
    out.requires_grad = True
    for p in parents:
        if p.requires_grad and not _is_output(tape, p):
            tape.watch(p)
    tape.nodes.append(_Node(op, out.tid, out.data.shape, tuple(parents), vjp))
    tape._produced.add(out.tid)
    return out


def _is_output(tape: Tape, t: Tensor) -> bool:
    return t.tid in tape._produced


def _same_dtype(op: str, *ts: Tensor):
    dt = ts[0].data.dtype
    for t in ts[1:]:
        if t.data.dtype != dt:
            raise _shape_error(op, *[f"dtype {t.data.dtype}" for t in ts])
    return dt


def _mm(a: np.ndarray, b: np.ndarray, out_dtype) -> np.ndarray:
    """Matrix product with float64 accumulation, cast to out_dtype."""
    if out_dtype == np.float64:
        return a @ b
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(out_dtype)


def _sum(a: np.ndarray, axis=None, keepdims=False):
    return np.sum(a, axis=axis, keepdims=keepdims, dtype=np.float64)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    dt = _same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise _shape_error("matmul", a.data.shape, b.data.shape)
    out = Tensor(_mm(a.data, b.data, dt))
    ad, bd = a.data, b.data

    def vjp(g):
        return (_mm(g, bd.T, dt) if a.requires_grad else None,
                _mm(ad.T, g, dt) if b.requires_grad else None)

    return _record("matmul", out, (a, b), vjp)


def sparse_dense_matmul(s: sp.spmatrix, b: Tensor) -> Tensor:
    """Constant sparse (CSR) times dense. Gradient flows to the dense side only."""
    if s.shape[1] != b.data.shape[0] or b.data.ndim != 2:
        raise _shape_error("sparse_dense_matmul", s.shape, b.data.shape)
    dt = b.data.dtype
    s64 = s.astype(np.float64)
    out = Tensor((s64 @ b.data.astype(np.float64)).astype(dt))
    st = s64.T.tocsr()

    def vjp(g):
        return ((st @ g.astype(np.float64)).astype(dt),)

    return _record("sparse_dense_matmul", out, (b,), vjp)


def _binary_broadcast(op: str, a: Tensor, b: Tensor):
    """Allow equal shapes, or b a row vector [cols] / [1, cols] against a [r, cols]."""
    if a.data.shape == b.data.shape:
        return False
    if a.data.ndim == 2 and b.data.ndim in (1, 2):
        cols = a.data.shape[1]
        if b.data.shape in ((cols,), (1, cols)):
            return True
    raise _shape_error(op, a.data.shape, b.data.shape)


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    out = _sum(g, axis=0, keepdims=(len(shape) == 2)).astype(g.dtype)
    return out.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    dt = _same_dtype("add", a, b)
    _binary_broadcast("add", a, b)
    out = Tensor((a.data + b.data).astype(dt))
    a_shape, b_shape = a.data.shape, b.data.shape

    def vjp(g):
        return (_reduce_to(g, a_shape) if a.requires_grad else None,
                _reduce_to(g, b_shape) if b.requires_grad else None)

    return _record("add", out, (a, b), vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    dt = _same_dtype("sub", a, b)
    _binary_broadcast("sub", a, b)
    out = Tensor((a.data - b.data).astype(dt))
    a_shape, b_shape = a.data.shape, b.data.shape

    def vjp(g):
        return (_reduce_to(g, a_shape) if a.requires_grad else None,
                -_reduce_to(g, b_shape) if b.requires_grad else None)

    return _record("sub", out, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    dt = _same_dtype("mul", a, b)
    _binary_broadcast("mul", a, b)
    out = Tensor((a.data * b.data).astype(dt))
    ad, bd = a.data, b.data

    def vjp(g):
        return (_reduce_to((g * bd).astype(dt), ad.shape) if a.requires_grad else None,
                _reduce_to((g * ad).astype(dt), bd.shape) if b.requires_grad else None)

    return _record("mul", out, (a, b), vjp)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    dt = a.data.dtype
    cval = dt.type(c)
    out = Tensor(a.data * cval)

    def vjp(g):
        return ((g * cval).astype(dt),)

    return _record("scalar_mul", out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    mask = a.data > 0

    def vjp(g):
        return ((g * mask).astype(a.data.dtype),)

    return _record("relu", out, (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    dt = a.data.dtype
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    denom = _sum(e, axis=axis, keepdims=True)
    s = (e / denom).astype(dt)
    out = Tensor(s)

    def vjp(g):
        inner = _sum(g * s, axis=axis, keepdims=True)
        return ((s * (g - inner)).astype(dt),)

    return _record("softmax", out, (a,), vjp)


def log_sum_exp(a: Tensor, axis: int = -1) -> Tensor:
    dt = a.data.dtype
    m = np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    total = _sum(e, axis=axis, keepdims=True)
    out_data = (m + np.log(total)).astype(dt)
    out = Tensor(np.squeeze(out_data, axis=axis))
    soft = (e / total).astype(dt)

    def vjp(g):
        return ((np.expand_dims(g, axis) * soft).astype(dt),)

    return _record("log_sum_exp", out, (a,), vjp)


def l2_normalize(a: Tensor) -> Tensor:
    """Row-wise L2 normalization of a 2-D tensor. Zero rows map to zero rows."""
    if a.data.ndim != 2:
        raise _shape_error("l2_normalize", a.data.shape)
    dt = a.data.dtype
    norms = np.sqrt(_sum(a.data.astype(np.float64) ** 2, axis=1, keepdims=True))
    nz = norms[:, 0] > 0
    safe = np.where(norms > 0, norms, 1.0)
    xn = (a.data / safe).astype(dt)
    xn[~nz] = 0
    out = Tensor(xn)

    def vjp(g):
        dot = _sum(g * xn, axis=1, keepdims=True)
        grad = ((g - xn * dot) / safe).astype(dt)
        grad[~nz] = 0
        return (grad,)

    return _record("l2_normalize", out, (a,), vjp)


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise _shape_error("gather_rows", a.data.shape, idx.shape)
    out = Tensor(a.data[idx])
    shape = a.data.shape

    def vjp(g):
        gz = np.zeros(shape, dtype=g.dtype)
        np.add.at(gz, idx, g)
        return (gz.astype(a.data.dtype),)

    return _record("gather_rows", out, (a,), vjp)


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    dt = _same_dtype("concat_rows", *tensors)
    cols = {t.data.shape[1:] for t in tensors}
    if len(cols) != 1:
        raise _shape_error("concat_rows", *[t.data.shape for t in tensors])
    out = Tensor(np.concatenate([t.data for t in tensors], axis=0).astype(dt))
    sizes = [t.data.shape[0] for t in tensors]

    def vjp(g):
        grads = []
        start = 0
        for t, size in zip(tensors, sizes):
            grads.append(g[start:start + size] if t.requires_grad else None)
            start += size
        return tuple(grads)

    return _record("concat_rows", out, tuple(tensors), vjp)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood with a fused, shift-stable log-softmax."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2 or targets.shape != (logits.data.shape[0],):
        raise _shape_error("cross_entropy", logits.data.shape, targets.shape)
    dt = logits.data.dtype
    n = logits.data.shape[0]
    z = logits.data.astype(np.float64)
    with np.errstate(invalid="ignore", over="ignore"):
        m = np.max(z, axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.sum(np.exp(z - m), axis=1))
        nll = lse - z[np.arange(n), targets]
        out = Tensor(np.asarray(nll.mean(), dtype=dt))
        soft = np.exp(z - lse[:, None])

    def vjp(g):
        grad = soft.copy()
        grad[np.arange(n), targets] -= 1.0
        return ((grad * (float(g) / n)).astype(dt),)

    return _record("cross_entropy", out, (logits,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError as exc:
        raise _shape_error("reshape", a.data.shape, tuple(shape)) from exc
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _record("reshape", out, (a,), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise _shape_error("transpose", a.data.shape)
    out = Tensor(np.ascontiguousarray(a.data.T))

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return _record("transpose", out, (a,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.data.shape[1]):
        raise _shape_error("slice_cols", a.data.shape, (start, stop))
    out = Tensor(np.ascontiguousarray(a.data[:, start:stop]))
    shape = a.data.shape

    def vjp(g):
        gz = np.zeros(shape, dtype=g.dtype)
        gz[:, start:stop] = g
        return (gz.astype(a.data.dtype),)

    return _record("slice_cols", out, (a,), vjp)


def per_row_matvec(w: Tensor, x: Tensor) -> Tensor:
    """Row-batched matrix-vector product: out[i] = w[i] @ x[i].

    w has shape [n, p, q], x has shape [n, q]; the result is [n, p]. Used to
    apply per-node generated projection weights without materializing loops.
    """
    dt = _same_dtype("per_row_matvec", w, x)
    if w.data.ndim != 3 or x.data.ndim != 2 or w.data.shape[0] != x.data.shape[0] \
            or w.data.shape[2] != x.data.shape[1]:
        raise _shape_error("per_row_matvec", w.data.shape, x.data.shape)
    w64 = w.data.astype(np.float64)
    x64 = x.data.astype(np.float64)
    out = Tensor(np.einsum("npq,nq->np", w64, x64).astype(dt))

    def vjp(g):
        g64 = g.astype(np.float64)
        gw = np.einsum("np,nq->npq", g64, x64).astype(dt) if w.requires_grad else None
        gx = np.einsum("npq,np->nq", w64, g64).astype(dt) if x.requires_grad else None
        return (gw, gx)

    return _record("per_row_matvec", out, (w, x), vjp)


def sum_all(a: Tensor) -> Tensor:
    dt = a.data.dtype
    out = Tensor(np.asarray(_sum(a.data), dtype=dt))
    shape = a.data.shape

    def vjp(g):
        return (np.full(shape, g, dtype=dt),)

    return _record("sum_all", out, (a,), vjp)


def mean_all(a: Tensor) -> Tensor:
    dt = a.data.dtype
    size = a.data.size
    out = Tensor(np.asarray(_sum(a.data) / size, dtype=dt))
    shape = a.data.shape

    def vjp(g):
        return (np.full(shape, g / size, dtype=dt),)

    return _record("mean_all", out, (a,), vjp)


# ---------------------------------------------------------------------------
# Backward pass and optimizer
# ---------------------------------------------------------------------------

class GradMap:
    """Gradients keyed by tensor; unreachable watched leaves read as zero."""

    def __init__(self, grads: dict[int, np.ndarray], leaves: list[Tensor]):
        self._grads = grads
        self._leaves = {t.tid: t for t in leaves}

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(t.tid)
        if g is None:
            return np.zeros_like(t.data)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return t.tid in self._grads or t.tid in self._leaves

    def leaves(self) -> list[Tensor]:
        return list(self._leaves.values())


def backward(loss: Tensor, tape: Tape | None = None) -> GradMap:
    """Pull a gradient of one back from `loss` through the recorded tape."""
    tape = tape or _active_tape()
    if tape is None:
        raise RuntimeError("backward: no active tape")
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {
        loss.tid: np.ones_like(loss.data)
    }
    for node in reversed(tape.nodes):
        g = grads.pop(node.out_tid, None)
        if g is None:
            continue
        parent_grads = node.vjp(g)
        for parent, pg in zip(node.parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.tid in grads:
                grads[parent.tid] = grads[parent.tid] + pg
            else:
                grads[parent.tid] = pg
    leaf_grads = {t.tid: grads.get(t.tid, np.zeros_like(t.data)) for t in tape._leaves}
    return GradMap(leaf_grads, tape._leaves)


@dataclass
class AdamState:
    """First/second moment buffers plus the shared step counter."""

    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[Tensor]) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params: Sequence[Tensor], grads, state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    """One Adam update with bias correction; mutates params in place."""
    if len(state.m) != len(params):
        raise ShapeError(f"adam_step: state tracks {len(state.m)} params, got {len(params)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, p in enumerate(params):
        g = grads[p] if not isinstance(grads, (list, tuple)) else grads[k]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} vs param {p.data.shape}")
        m = state.m[k].astype(np.float64) * beta1 + (1 - beta1) * g
        v = state.v[k].astype(np.float64) * beta2 + (1 - beta2) * g * g
        state.m[k] = m.astype(p.data.dtype)
        state.v[k] = v.astype(p.data.dtype)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.data = (p.data.astype(np.float64) - lr * update).astype(p.data.dtype)
    return state
