"""Dense-tensor engine with reverse-mode automatic differentiation.

Design notes:

* Working precision is float32; a tape built from float64 tensors runs
  entirely in float64, which is what the gradient checker uses.
* Ops record themselves on the thread-local active `Tape` in execution
  order (a Wengert list). `Tape.backward` walks the records in exact
  reverse order, so replaying a forward pass reproduces gradients
  bit-for-bit.
* With no tape active, ops are plain numpy computations (evaluation mode).
* The op set is deliberately small: matmul, elementwise add/sub/mul/div,
  sigmoid, GELU, row softmax, layer norm, mean over an axis, concat,
  narrow (slice), embedding-row gather, seeded dropout, and the two fused
  losses. Elementwise broadcasting is supported with gradients reduced
  back to each operand's shape; nothing fancier (no einsum, no views).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ContractError, DimensionError
from .rng import DropoutRng

__all__ = [
    "Tensor", "Tape", "tensor", "constant",
    "matmul", "add", "sub", "mul", "div", "sigmoid", "gelu",
    "softmax_rows", "layer_norm", "mean_axis", "concat", "narrow",
    "gather_rows", "dropout", "cross_entropy_with_logits", "mse_loss",
]

_FLOAT_TYPES = (np.float32, np.float64)
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense float array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            arr = np.asarray(data)
            if arr.dtype not in _FLOAT_TYPES:
                arr = arr.astype(np.float32)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, dtype=self.data.dtype)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


# --- tape ---------------------------------------------------------------

_tls = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_tls, "tape", None)


class Tape:
    """Execution-ordered op record; one active tape per thread at a time."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise ContractError("a Tape is already active on this thread")
        _tls.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tls.tape = None

    def record(self, out: Tensor, parents: tuple[Tensor, ...],
               backward_fn: Callable[[np.ndarray], None]) -> None:
        self._records.append((out, parents, backward_fn))

    def backward(self, loss: Tensor) -> None:
        """Populate `.grad` on every requires_grad tensor reachable on the tape.

        Leaves that appear on the tape but do not influence `loss` receive an
        exact zero gradient.
        """
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        for _, parents, _ in self._records:
            for p in parents:
                if p.requires_grad and p.grad is None:
                    p.grad = np.zeros_like(p.data)
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad += np.ones_like(loss.data)
        for out, _, backward_fn in reversed(self._records):
            if out.grad is None:
                continue  # dead branch: never received a gradient
            backward_fn(out.grad)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summing expanded axes."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (gs, ts) in enumerate(zip(g.shape, shape)):
        if ts == 1 and gs != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _result(out_data: np.ndarray, parents: tuple[Tensor, ...],
            backward_fn: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    tape = _active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, parents, backward_fn)
    return out


def _check_same_dtype(a: Tensor, b: Tensor) -> None:
    if a.data.dtype != b.data.dtype:
        raise ContractError(
            f"mixed dtypes {a.data.dtype} and {b.data.dtype}; cast explicitly"
        )


def _as_operand(x, like: Tensor) -> Tensor:
    """Lift a python scalar / ndarray to a constant Tensor matching `like`'s dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), requires_grad=False,
                  dtype=like.data.dtype)


# --- elementwise binaries -------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_same_dtype(a, b)
    out_data = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _result(out_data, (a, b), backward)


def sub(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_same_dtype(a, b)
    out_data = a.data - b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _result(out_data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_same_dtype(a, b)
    out_data = a.data * b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(out_data, (a, b), backward)


def div(a: Tensor, b) -> Tensor:
    b = _as_operand(b, a)
    _check_same_dtype(a, b)
    out_data = a.data / b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out_data / b.data, b.data.shape))

    return _result(out_data, (a, b), backward)


# --- matmul ---------------------------------------------------------------

def matmul(a: Tensor, b: Tensor, transpose_a: bool = False,
           transpose_b: bool = False) -> Tensor:
    """Matrix product over the trailing two axes; leading axes broadcast.

    `transpose_a` / `transpose_b` swap the trailing two axes of that operand
    before multiplying (needed for attention scores without a transpose op).
    """
    _check_same_dtype(a, b)
    a_eff = np.swapaxes(a.data, -1, -2) if transpose_a else a.data
    b_eff = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if a_eff.ndim < 2 or b_eff.ndim < 2:
        raise DimensionError(
            f"matmul needs >=2-d operands, got {a.data.shape} and {b.data.shape}"
        )
    if a_eff.shape[-1] != b_eff.shape[-2]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.data.shape}"
            f"{'^T' if transpose_a else ''} x {b.data.shape}"
            f"{'^T' if transpose_b else ''}"
        )
    out_data = a_eff @ b_eff

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            ga = g @ np.swapaxes(b_eff, -1, -2)
            if transpose_a:
                ga = np.swapaxes(ga, -1, -2)
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a_eff, -1, -2) @ g
            if transpose_b:
                gb = np.swapaxes(gb, -1, -2)
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _result(out_data, (a, b), backward)


# --- elementwise unaries ----------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * out_data * (1.0 - out_data))

    return _result(out_data, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-form) GELU."""
    d = x.data
    cdf = 0.5 * (1.0 + erf(d * _INV_SQRT2))
    out_data = (d * cdf).astype(d.dtype)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            pdf = np.exp(-0.5 * d * d) * _INV_SQRT_2PI
            _accum(x, (g * (cdf + d * pdf)).astype(d.dtype))

    return _result(out_data, (x,), backward)


# --- normalization ----------------------------------------------------------

def softmax_rows(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, stabilized by row-max subtraction.

    `additive_mask` (plain ndarray, broadcastable, not differentiated) is
    added to the logits first; use large negative values to exclude keys.
    """
    z = x.data if additive_mask is None else x.data + additive_mask.astype(x.data.dtype)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            inner = (g * out_data).sum(axis=-1, keepdims=True)
            _accum(x, out_data * (g - inner))

    return _result(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    _check_same_dtype(x, gain)
    _check_same_dtype(x, bias)
    d = x.data
    n = d.shape[-1]
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=d.dtype))
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backward(g: np.ndarray) -> None:
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return _result(out_data, (x, gain, bias), backward)


# --- reductions & rearrangement ---------------------------------------------

def mean_axis(x: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    out_data = x.data.mean(axis=axis, keepdims=keepdims)
    n = x.data.shape[axis]

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(ge / n, x.data.shape).astype(x.data.dtype))

    return _result(out_data, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def backward(g: np.ndarray) -> None:
        start = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(start, start + size)
                _accum(t, g[tuple(idx)])
            start += size

    return _result(out_data, tuple(tensors), backward)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice `start:start+length` along `axis`."""
    if start < 0 or length < 0 or start + length > x.data.shape[axis]:
        raise ContractError(
            f"narrow [{start}:{start + length}] out of range for axis {axis} "
            f"of shape {x.data.shape}"
        )
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = np.ascontiguousarray(x.data[idx])

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            buf = np.zeros_like(x.data)
            buf[idx] = g
            _accum(x, buf)

    return _result(out_data, (x,), backward)


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row lookup `table[indices]`; indices are constant integers."""
    idx = np.asarray(indices)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ContractError(f"gather_rows needs integer indices, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise ContractError(
            f"gather_rows index out of range for table with {table.data.shape[0]} rows"
        )
    out_data = table.data[idx]

    def backward(g: np.ndarray) -> None:
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx, g)
            _accum(table, buf)

    return _result(out_data, (table,), backward)


def dropout(x: Tensor, rate: float, rng: DropoutRng, train: bool = True) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0.

    The mask comes from the counter-based `rng`, so a replay with the same
    seed and counter is bit-identical.
    """
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    keep = (rng.next_uniform(x.data.shape) >= rate).astype(x.data.dtype)
    mask = keep / np.asarray(1.0 - rate, dtype=x.data.dtype)
    out_data = x.data * mask

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            _accum(x, g * mask)

    return _result(out_data, (x,), backward)


# --- fused losses -------------------------------------------------------------

def cross_entropy_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer `labels` under row logits [n, C]."""
    if logits.data.ndim != 2:
        raise ContractError(f"logits must be 2-d [n, C], got {logits.data.shape}")
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ContractError(f"label out of range for {c} classes")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(n)
    out_data = np.asarray(-logp[rows, labels].mean(), dtype=logits.data.dtype)

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[rows, labels] -= 1.0
            _accum(logits, grad * (g / n))

    return _result(out_data, (logits,), backward)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target of identical shape."""
    target = np.asarray(target, dtype=pred.data.dtype)
    if target.shape != pred.data.shape:
        raise ContractError(
            f"mse_loss shapes differ: pred {pred.data.shape}, target {target.shape}"
        )
    diff = pred.data - target
    out_data = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype)

    def backward(g: np.ndarray) -> None:
        if pred.requires_grad:
            _accum(pred, g * 2.0 * diff / diff.size)

    return _result(out_data, (pred,), backward)
