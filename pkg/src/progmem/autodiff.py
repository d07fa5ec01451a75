"""Minimal tape-based reverse-mode automatic differentiation on float64 arrays.

Every differentiable primitive computes its forward value with numpy and, when a
:class:`Tape` is active and an input requires gradients, appends a record that
holds the vector-Jacobian product closure.  ``backward`` replays the records in
reverse execution order, each exactly once.

Typical use::

    with Tape() as tape:
        loss = cross_entropy(logits_fn(x), label)
    backward(loss)          # fills Parameter.grad
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

LOG_CLAMP = -745.0

_ACTIVE: list["Tape"] = []


class Tensor:
    """Dense float64 array, optionally tracked for reverse-mode gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        if any(s <= 0 for s in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() requires a single-element tensor")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; each maps onto a recorded primitive
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates across backward calls."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, float(x)))


@dataclass
class _Record:
    op: str
    inputs: tuple
    outputs: tuple
    vjp: Callable


@dataclass
class Tape:
    """Ordered log of executed primitives for one forward pass.

    A tape is meant to live for a single training step; it keeps references to
    every intermediate, so drop it once ``backward`` has run.
    """

    records: list = field(default_factory=list)
    visited: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor):
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise ValueError("loss was not produced on this tape")
        adj = {id(loss): np.ones_like(loss.data)}
        self.visited = []
        for idx in range(len(self.records) - 1, -1, -1):
            rec = self.records[idx]
            gouts = [adj.pop(id(o), None) for o in rec.outputs]
            if all(g is None for g in gouts):
                continue
            self.visited.append(idx)
            gins = rec.vjp(gouts)
            for inp, g in zip(rec.inputs, gins):
                if g is None or not inp.requires_grad:
                    continue
                if inp._tape is not self:
                    # leaf for this tape: parameters and user inputs
                    if inp.grad is None:
                        inp.grad = np.array(g, dtype=np.float64)
                    else:
                        inp.grad += g
                else:
                    key = id(inp)
                    prev = adj.get(key)
                    adj[key] = g if prev is None else prev + g


def active_tape() -> Optional[Tape]:
    return _ACTIVE[-1] if _ACTIVE else None


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every tracked leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise ValueError("loss was not produced on an active tape")
    loss._tape.backward(loss)


def _emit(op: str, inputs: Sequence[Tensor], datas, vjp) -> tuple:
    """Wrap raw outputs and record them on the active tape if needed."""
    multi = isinstance(datas, tuple)
    outs = tuple(Tensor(d) for d in (datas if multi else (datas,)))
    tape = _ACTIVE[-1] if _ACTIVE else None
    if tape is not None and any(t.requires_grad for t in inputs):
        for o in outs:
            o.requires_grad = True
            o._tape = tape
        tape.records.append(_Record(op, tuple(inputs), outs, vjp))
    return outs if multi else outs[0]


# ---------------------------------------------------------------- primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix (or matrix-vector) product with adjoints g·Bᵀ and Aᵀ·g."""
    A, B = a.data, b.data
    if A.ndim not in (1, 2) or B.ndim not in (1, 2) or A.shape[-1] != B.shape[0]:
        raise ValueError(f"matmul shape mismatch: {A.shape} @ {B.shape}")

    need_a, need_b = a.requires_grad, b.requires_grad

    def vjp(gs):
        g = gs[0]
        if A.ndim == 2 and B.ndim == 2:
            return (g @ B.T if need_a else None), (A.T @ g if need_b else None)
        if A.ndim == 1 and B.ndim == 2:
            return B @ g, np.outer(A, g)
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        return g * B, g * A

    return _emit("matmul", (a, b), A @ B, vjp)


def _check_same_or_rowbias(a, b, op):
    if a.shape == b.shape:
        return False
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return True
    raise ValueError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; ``b`` may be a row bias added to every row of ``a``."""
    rowbias = _check_same_or_rowbias(a, b, "add")

    def vjp(gs):
        g = gs[0]
        return g, (g.sum(axis=0) if rowbias else g)

    return _emit("add", (a, b), a.data + b.data, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    rowbias = _check_same_or_rowbias(a, b, "sub")

    def vjp(gs):
        g = gs[0]
        return g, (-g.sum(axis=0) if rowbias else -g)

    return _emit("sub", (a, b), a.data - b.data, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _emit("mul", (a, b), A * B, lambda gs: (gs[0] * B, gs[0] * A))


def scale(a: Tensor, c: float) -> Tensor:
    return _emit("scale", (a,), a.data * c, lambda gs: (gs[0] * c,))


def activation(x: Tensor, kind: str) -> Tensor:
    """Elementwise tanh, sigmoid or identity ("linear")."""
    X = x.data
    if not np.isfinite(X).all():
        raise ValueError("activation received non-finite input")
    if kind == "tanh":
        Y = np.tanh(X)
        return _emit("tanh", (x,), Y, lambda gs: (gs[0] * (1.0 - Y * Y),))
    if kind == "sigmoid":
        Y = expit(X)
        return _emit("sigmoid", (x,), Y, lambda gs: (gs[0] * Y * (1.0 - Y),))
    if kind == "linear":
        return _emit("linear", (x,), X.copy(), lambda gs: (gs[0],))
    raise ValueError(f"unknown activation {kind!r}")


def tanh(x: Tensor) -> Tensor:
    return activation(x, "tanh")


def sigmoid(x: Tensor) -> Tensor:
    return activation(x, "sigmoid")


def _softmax_np(Z: np.ndarray) -> np.ndarray:
    E = np.exp(Z - Z.max(axis=-1, keepdims=True))
    return E / E.sum(axis=-1, keepdims=True)


def softmax(v: Tensor) -> Tensor:
    """Max-shifted softmax over the last axis (rows for a matrix)."""
    if v.data.size == 0 or v.shape[-1] < 1:
        raise ValueError("softmax of an empty vector")
    P = _softmax_np(v.data)

    def vjp(gs):
        g = gs[0]
        return (P * (g - (g * P).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", (v,), P, vjp)


def cross_entropy(logits: Tensor, label) -> Tensor:
    """-log softmax(logits)[label], averaged over rows for a batch.

    ``logits`` is ``[C]`` with an int label or ``[B, C]`` with ``B`` labels.
    The log-probability is clamped at -745 so saturated logits stay finite.
    """
    Z = logits.data
    single = Z.ndim == 1
    Z2 = Z[None, :] if single else Z
    labels = np.atleast_1d(np.asarray(label, dtype=np.int64))
    n, C = Z2.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if (labels < 0).any() or (labels >= C).any():
        raise ValueError(f"label out of range for {C} classes: {labels.tolist()}")
    shifted = Z2 - Z2.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    picked = logp[np.arange(n), labels]
    clamped = picked < LOG_CLAMP
    loss = -np.where(clamped, LOG_CLAMP, picked).mean()

    def vjp(gs):
        g = float(gs[0])
        G = np.exp(logp)
        G[np.arange(n), labels] -= 1.0
        G[clamped] = 0.0
        G *= g / n
        return (G[0] if single else G,)

    return _emit("cross_entropy", (logits,), np.array(loss), vjp)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = np.concatenate(datas, axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([d.shape[ax] for d in datas])[:-1]

    def vjp(gs):
        return tuple(np.split(gs[0], bounds, axis=ax))

    return _emit("concat", tuple(tensors), out, vjp)


def take(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    X = x.data
    ax = axis % X.ndim
    if not 0 <= start < stop <= X.shape[ax]:
        raise ValueError(f"slice [{start}:{stop}] out of range for axis of size {X.shape[ax]}")
    idx = [slice(None)] * X.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def vjp(gs):
        G = np.zeros_like(X)
        G[idx] = gs[0]
        return (G,)

    return _emit("take", (x,), X[idx].copy(), vjp)


def split(x: Tensor, parts: int, axis: int = 0) -> tuple:
    """Split into ``parts`` equal contiguous pieces along ``axis``."""
    X = x.data
    ax = axis % X.ndim
    if X.shape[ax] % parts:
        raise ValueError(f"cannot split axis of size {X.shape[ax]} into {parts} parts")
    pieces = tuple(p.copy() for p in np.split(X, parts, axis=ax))

    def vjp(gs):
        return (np.concatenate([np.zeros_like(p) if g is None else g
                                for g, p in zip(gs, pieces)], axis=ax),)

    return _emit("split", (x,), pieces, vjp)


def gather_rows(table: Tensor, ids) -> Tensor:
    """Row gather ``table[ids]``; gradients scatter-add into gathered rows only."""
    ids = np.asarray(ids, dtype=np.int64)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise ValueError(f"row id out of range for table with {V} rows")
    T = table.data

    def vjp(gs):
        G = np.zeros_like(T)
        np.add.at(G, ids.reshape(-1), gs[0].reshape(-1, T.shape[1]))
        return (G,)

    return _emit("gather_rows", (table,), T[ids], vjp)


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ValueError("transpose expects a matrix")
    return _emit("transpose", (x,), x.data.T.copy(), lambda gs: (gs[0].T,))


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape).copy(),
                 lambda gs: (gs[0].reshape(src),))


def permute(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit("permute", (x,), np.ascontiguousarray(x.data.transpose(axes)),
                 lambda gs: (gs[0].transpose(inv),))


def where(mask: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select ``a`` where ``mask`` else ``b`` (mask is a constant)."""
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    if a.shape != b.shape:
        raise ValueError(f"where shape mismatch: {a.shape} vs {b.shape}")
    return _emit("where", (a, b), np.where(mask, a.data, b.data),
                 lambda gs: (np.where(mask, gs[0], 0.0), np.where(mask, 0.0, gs[0])))


def tsum(x: Tensor) -> Tensor:
    X = x.data
    return _emit("sum", (x,), np.array(X.sum()), lambda gs: (np.full_like(X, float(gs[0])),))


def mean(x: Tensor) -> Tensor:
    X = x.data
    n = X.size
    return _emit("mean", (x,), np.array(X.mean()),
                 lambda gs: (np.full_like(X, float(gs[0]) / n),))


def lstm_cell(pre: Tensor, c_prev: Tensor):
    """Fused LSTM nonlinearity on gate pre-activations ``[.., 4D]`` ordered (i, f, g, o).

    Returns ``(h, c)``; fusing keeps the per-step tape short.
    """
    P = pre.data
    C0 = c_prev.data
    D = C0.shape[-1]
    if P.shape[-1] != 4 * D or P.shape[:-1] != C0.shape[:-1]:
        raise ValueError(f"lstm_cell shape mismatch: pre {P.shape}, cell {C0.shape}")
    i = expit(P[..., :D])
    f = expit(P[..., D:2 * D])
    g = np.tanh(P[..., 2 * D:3 * D])
    o = expit(P[..., 3 * D:])
    c = f * C0 + i * g
    tc = np.tanh(c)
    h = o * tc

    def vjp(gs):
        gh, gc = gs
        gct = gc.copy() if gc is not None else np.zeros_like(c)
        if gh is not None:
            gct += gh * o * (1.0 - tc * tc)
            go = gh * tc
        else:
            go = np.zeros_like(c)
        dpre = np.concatenate([
            gct * g * i * (1.0 - i),
            gct * C0 * f * (1.0 - f),
            gct * i * (1.0 - g * g),
            go * o * (1.0 - o),
        ], axis=-1)
        return dpre, gct * f

    return _emit("lstm_cell", (pre, c_prev), (h, c), vjp)


# ---------------------------------------------------------------- grad check

class NonDeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    """Maximum relative error per parameter name, plus the worst overall."""

    errors: dict
    checked: dict

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_error < tol


def relative_error(a, b, floor: float = 1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(fn: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5,
               max_per_param: Optional[int] = None, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``fn`` must rebuild the scalar loss from the current parameter values each
    call.  At most ``max_per_param`` elements per parameter are probed (chosen
    with ``seed``); ``None`` checks every element.  Relative error is
    ``|a - n| / max(|a|, |n|, floor)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = list(params)
    for p in params:
        p.grad = np.zeros_like(p.data)
    with Tape() as tape:
        loss = fn()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]

    def value() -> float:
        return float(fn().data)

    v1, v2 = value(), value()
    if v1 != v2:
        raise NonDeterministicError(f"forward is not deterministic: {v1!r} != {v2!r}")

    rng = np.random.default_rng(seed)
    errors, checked = {}, {}
    for k, (p, ga) in enumerate(zip(params, analytic)):
        name = getattr(p, "name", f"input{k}")
        flat = p.data.reshape(-1)
        n = flat.size
        idx = np.arange(n) if max_per_param is None or max_per_param >= n \
            else rng.choice(n, size=max_per_param, replace=False)
        worst = 0.0
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            fp = value()
            flat[j] = orig - eps
            fm = value()
            flat[j] = orig
            num = (fp - fm) / (2.0 * eps)
            worst = max(worst, float(relative_error(ga.reshape(-1)[j], num, floor)))
        errors[name] = worst
        checked[name] = len(idx)
    logger.debug("grad_check max error %.3e", max(errors.values(), default=0.0))
    return GradCheckReport(errors, checked)
