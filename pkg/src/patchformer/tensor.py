"""Dense tensors with reverse-mode differentiation.

Values are numpy arrays. A Graph records every primitive op in execution
order while it is active; backward replays the tape in exact reverse order
and accumulates gradients additively into the leaf tensors that requested
them. Ops executed with no active graph are plain numpy computations, which
keeps evaluation free of any gradient bookkeeping.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy import special

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "NonScalarLossError",
    "set_default_dtype",
    "get_default_dtype",
    "default_dtype",
    "backward",
    "grad_check",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "broadcast_to",
    "getitem",
    "tensor_sum",
    "mean",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "dropout",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class NonScalarLossError(ValueError):
    """Raised when backward is asked to start from a non-scalar."""


_DEFAULT_DTYPE = np.float32


def set_default_dtype(dtype) -> None:
    """Set the dtype used for tensors created without an explicit dtype.

    32-bit is the training default; 64-bit tightens oracle and
    finite-difference comparisons.
    """
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}; use float32 or float64")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextmanager
def default_dtype(dtype) -> Iterator[None]:
    """Temporarily switch the default tensor dtype."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """Dense row-major array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = _DEFAULT_DTYPE if not isinstance(data, np.ndarray) else data.dtype
            if np.dtype(dtype).kind != "f":
                dtype = _DEFAULT_DTYPE
        # asarray with order="C", not ascontiguousarray: the latter would
        # promote 0-d scalars (e.g. losses) to shape (1,)
        self.data = np.asarray(data, dtype=dtype, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar; every path goes through the recorded primitives.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype), requires_grad=False)


def param(data) -> Tensor:
    """Trainable tensor cast to the current default dtype.

    Initializers (rng draws, ones, zeros) produce 64-bit arrays; parameters
    must follow the configured precision instead of inheriting it.
    """
    return Tensor(np.asarray(data, dtype=_DEFAULT_DTYPE), requires_grad=True)


# ---------------------------------------------------------------------------
# Tape


class Graph:
    """Execution-ordered tape of primitive ops.

    Single-threaded during record and backward; use one Graph per forward
    pass (and per thread for batch-parallel work).
    """

    def __init__(self):
        # each node: (output tensor, input tensors, fn(out_grad) -> input grads)
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self._previous: Graph | None = None

    def __enter__(self) -> "Graph":
        global _ACTIVE_GRAPH
        self._previous = _ACTIVE_GRAPH
        _ACTIVE_GRAPH = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE_GRAPH
        _ACTIVE_GRAPH = self._previous
        self._previous = None

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


_ACTIVE_GRAPH: Graph | None = None


def _recording() -> bool:
    return _ACTIVE_GRAPH is not None


def _record(out: Tensor, inputs: tuple[Tensor, ...], fn: Callable) -> None:
    if out.requires_grad and _ACTIVE_GRAPH is not None:
        _ACTIVE_GRAPH.nodes.append((out, inputs, fn))


def _wants_grad(*tensors: Tensor) -> bool:
    return _recording() and any(t.requires_grad for t in tensors)


def backward(loss: Tensor, graph: Graph) -> None:
    """Accumulate dLoss/dX into every requires_grad leaf reachable in graph.

    Gradient accumulation is additive: callers zero leaf grads between
    optimizer steps. Intermediate gradients live only for the duration of
    the pass.
    """
    if loss.size != 1:
        raise NonScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    # pass-local accumulation; keyed by object identity
    pending: dict[int, tuple[Tensor, np.ndarray]] = {
        id(loss): (loss, np.ones(loss.shape, dtype=loss.dtype))
    }
    for out, inputs, fn in reversed(graph.nodes):
        entry = pending.pop(id(out), None)
        if entry is None:
            continue
        grads = fn(entry[1])
        for t, g in zip(inputs, grads):
            if g is None or not t.requires_grad:
                continue
            held = pending.get(id(t))
            pending[id(t)] = (t, g if held is None else held[1] + g)
    # whatever was never produced by a node in this graph is a leaf
    for t, g in pending.values():
        if t.requires_grad:
            t.grad = g.astype(t.dtype, copy=False) if t.grad is None else t.grad + g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# Primitives


def add(a: Tensor, b) -> Tensor:
    a_t = a if isinstance(a, Tensor) else _as_tensor(a, b.dtype)
    b_t = _as_tensor(b, a_t.dtype)
    out = Tensor(a_t.data + b_t.data, requires_grad=_wants_grad(a_t, b_t))

    def backward_fn(g):
        return _unbroadcast(g, a_t.shape), _unbroadcast(g, b_t.shape)

    _record(out, (a_t, b_t), backward_fn)
    return out


def sub(a: Tensor, b) -> Tensor:
    a_t = a if isinstance(a, Tensor) else _as_tensor(a, b.dtype)
    b_t = _as_tensor(b, a_t.dtype)
    out = Tensor(a_t.data - b_t.data, requires_grad=_wants_grad(a_t, b_t))

    def backward_fn(g):
        return _unbroadcast(g, a_t.shape), -_unbroadcast(g, b_t.shape)

    _record(out, (a_t, b_t), backward_fn)
    return out


def mul(a: Tensor, b) -> Tensor:
    a_t = a if isinstance(a, Tensor) else _as_tensor(a, b.dtype)
    b_t = _as_tensor(b, a_t.dtype)
    out = Tensor(a_t.data * b_t.data, requires_grad=_wants_grad(a_t, b_t))
    a_data, b_data = a_t.data, b_t.data

    def backward_fn(g):
        return _unbroadcast(g * b_data, a_t.shape), _unbroadcast(g * a_data, b_t.shape)

    _record(out, (a_t, b_t), backward_fn)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, requires_grad=_wants_grad(a))

    def backward_fn(g):
        return (-g,)

    _record(out, (a,), backward_fn)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports stacked leading dims on either operand."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), requires_grad=_wants_grad(a, b))
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        da = _unbroadcast(np.matmul(g, np.swapaxes(b_data, -1, -2)), a_data.shape)
        db = _unbroadcast(np.matmul(np.swapaxes(a_data, -1, -2), g), b_data.shape)
        return da, db

    _record(out, (a, b), backward_fn)
    return out


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    out = Tensor(np.swapaxes(a.data, -1, -2), requires_grad=_wants_grad(a))

    def backward_fn(g):
        return (np.swapaxes(g, -1, -2),)

    _record(out, (a,), backward_fn)
    return out


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(a.data.reshape(shape), requires_grad=_wants_grad(a))
    original = a.shape

    def backward_fn(g):
        return (g.reshape(original),)

    _record(out, (a,), backward_fn)
    return out


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    parts = tuple(tensors)
    out = Tensor(
        np.concatenate([t.data for t in parts], axis=axis),
        requires_grad=_recording() and any(t.requires_grad for t in parts),
    )
    sizes = [t.shape[axis] for t in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(
            np.moveaxis(moved[offsets[i] : offsets[i + 1]], 0, axis)
            for i in range(len(parts))
        )

    _record(out, parts, backward_fn)
    return out


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = Tensor(
        np.ascontiguousarray(np.broadcast_to(a.data, shape)),
        requires_grad=_wants_grad(a),
    )
    original = a.shape

    def backward_fn(g):
        return (_unbroadcast(g, original),)

    _record(out, (a,), backward_fn)
    return out


def getitem(a: Tensor, key) -> Tensor:
    out = Tensor(np.ascontiguousarray(a.data[key]), requires_grad=_wants_grad(a))
    shape, dtype = a.shape, a.dtype

    def backward_fn(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, key, g)
        return (full,)

    _record(out, (a,), backward_fn)
    return out


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), requires_grad=_wants_grad(a))
    shape = a.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    _record(out, (a,), backward_fn)
    return out


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        count = a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Probability-normalize slices along axis, max-subtracted for stability."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, requires_grad=_wants_grad(x))

    def backward_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - inner),)

    _record(out, (x,), backward_fn)
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    logp = shifted - log_z
    out = Tensor(logp, requires_grad=_wants_grad(x))
    probs = np.exp(logp)

    def backward_fn(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    _record(out, (x,), backward_fn)
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float) -> Tensor:
    """Normalize each slice along the last axis to mean 0 / variance 1, then
    apply the learned affine transform."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine params must have shape ({d},), "
            f"got gamma {gamma.shape}, beta {beta.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    x_hat = (x.data - mu) * inv_std
    out = Tensor(
        x_hat * gamma.data + beta.data, requires_grad=_wants_grad(x, gamma, beta)
    )
    gamma_data = gamma.data

    def backward_fn(g):
        d_beta = g.reshape(-1, d).sum(axis=0)
        d_gamma = (g * x_hat).reshape(-1, d).sum(axis=0)
        d_hat = g * gamma_data
        dx = inv_std * (
            d_hat
            - d_hat.mean(axis=-1, keepdims=True)
            - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return dx, d_gamma, d_beta

    _record(out, (x, gamma, beta), backward_fn)
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, exact erf form: x * Phi(x)."""
    phi_cdf = 0.5 * (1.0 + special.erf(x.data * _INV_SQRT2))
    out = Tensor(
        (x.data * phi_cdf).astype(x.dtype, copy=False), requires_grad=_wants_grad(x)
    )
    x_data = x.data

    def backward_fn(g):
        pdf = np.exp(-0.5 * x_data * x_data) * _INV_SQRT2PI
        return (g * (phi_cdf + x_data * pdf),)

    _record(out, (x,), backward_fn)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    out = Tensor(x.data * keep * scale, requires_grad=_wants_grad(x))

    def backward_fn(g):
        return (g * keep * scale,)

    _record(out, (x,), backward_fn)
    return out


# ---------------------------------------------------------------------------
# Verification


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Compare the analytic gradient of scalar-valued f against central
    finite differences.

    Returns max over coordinates of |analytic - numeric| / max(1, |analytic|).
    Clears any gradient already held by x.
    """
    if h <= 0:
        raise ValueError(f"step size must be positive, got {h}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    with Graph() as graph:
        loss = f(probe)
        backward(loss, graph)
    analytic = probe.grad
    if analytic is None:
        analytic = np.zeros_like(probe.data)

    flat = probe.data.reshape(-1)
    numeric = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f(Tensor(probe.data.copy(), requires_grad=False)).item()
        flat[i] = saved - h
        down = f(Tensor(probe.data.copy(), requires_grad=False)).item()
        flat[i] = saved
        numeric[i] = (up - down) / (2.0 * h)

    a = analytic.reshape(-1).astype(np.float64)
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max()) if rel.size else 0.0
