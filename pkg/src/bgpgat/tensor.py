"""A small float64 array engine with tape-based reverse-mode differentiation.

Only the operations the detector needs are provided. Arrays are rank <= 3; a
leading batch axis is allowed and broadcasts against rank-2 operands in
``matmul`` and ``add``/``mul``.

Usage::

    with Tape() as tape:
        loss = mean(mul(x, x))
    tape.backward(loss)      # fills x.grad

Operations outside a ``Tape`` context compute values only.
"""
from __future__ import annotations

import contextvars
from typing import Callable, Sequence

import numpy as np

_current_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar("tape", default=None)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "tracked", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) \
            else data.astype(np.float64, copy=False)
        if arr.ndim > 3:
            raise ValueError(f"tensors are limited to rank 3, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.tracked = requires_grad  # participates in the active tape
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Append-only record of differentiable operations.

    Each node is ``(tag, output, inputs, backward_fn)``. ``backward`` walks
    the nodes once in reverse insertion order, which is a valid reverse
    topological order because nodes are appended as they are computed.
    """

    def __init__(self):
        self.nodes: list[tuple[str, Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _current_tape.set(self)
        return self

    def __exit__(self, *exc):
        _current_tape.reset(self._token)
        self._token = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, tag: str, out: Tensor, inputs: tuple[Tensor, ...], fn: Callable) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by backward(); call reset() first")
        out.tracked = True
        self.nodes.append((tag, out, inputs, fn))

    def reset(self) -> None:
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every ``requires_grad`` tensor reachable from ``loss``."""
        if self.consumed:
            raise RuntimeError("backward() already called on this tape; call reset() first")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for tag, out, inputs, fn in reversed(self.nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None or not inp.tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if inp.requires_grad:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            leaf.grad = grads[key]
        if loss.requires_grad and id(loss) not in leaves:
            loss.grad = np.ones_like(loss.data)
        self.nodes = []
        self.consumed = True


def _emit(tag: str, value: np.ndarray, inputs: tuple[Tensor, ...], fn: Callable) -> Tensor:
    out = Tensor(value)
    tape = _current_tape.get()
    if tape is not None and any(t.tracked for t in inputs):
        tape.record(tag, out, inputs, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# --- linear algebra and elementwise arithmetic ---------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    if a.ndim == 3 and b.ndim == 3 and a.shape[0] != b.shape[0]:
        raise ValueError(f"matmul batch mismatch: {a.shape} @ {b.shape}")
    av, bv = a.data, b.data
    if av.ndim == 3 and bv.ndim == 2:
        # fold the batch into rows: one large GEMM instead of B small ones
        flat = av.reshape(-1, av.shape[-1])

        def back_folded(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ bv.T).reshape(av.shape), flat.T @ g2

        value = (flat @ bv).reshape(av.shape[0], av.shape[1], bv.shape[1])
        return _emit("matmul", value, (a, b), back_folded)

    def back(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ g
        return _unbroadcast(ga, av.shape), _unbroadcast(gb, bv.shape)

    return _emit("matmul", av @ bv, (a, b), back)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def back(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit("sub", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.data, b.data

    def back(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _emit("mul", av * bv, (a, b), back)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _emit("scale", x.data * c, (x,), lambda g: (g * c,))


# --- shape manipulation ------------------------------------------------------


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    return _emit("transpose", np.swapaxes(x.data, -1, -2), (x,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _emit("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, idx) -> Tensor:
    """Basic (slice/integer) indexing."""
    x = as_tensor(x)
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[idx] += g
        return (gx,)

    return _emit("getitem", x.data[idx], (x,), back)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    if not tensors:
        raise ValueError("concat of nothing")
    value = np.concatenate([t.data for t in tensors], axis=axis)
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _emit("concat", value, tensors, back)


# --- nonlinearities ----------------------------------------------------------


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    v = x.data
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return _emit("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _emit("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _emit("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def elu(x, alpha: float = 1.0) -> Tensor:
    x = as_tensor(x)
    v = x.data
    neg = alpha * np.expm1(np.minimum(v, 0.0))
    out = np.where(v > 0, v, neg)
    return _emit("elu", out, (x,), lambda g: (g * np.where(v > 0, 1.0, neg + alpha),))


def leaky_relu(x, slope: float = 0.2, mode: str = "slope") -> Tensor:
    """``mode="slope"``: x < 0 maps to slope * x. ``mode="clamp"``: x < 0 maps to the constant slope."""
    x = as_tensor(x)
    v = x.data
    pos = v >= 0
    if mode == "slope":
        return _emit("leaky_relu", np.where(pos, v, slope * v), (x,),
                     lambda g: (g * np.where(pos, 1.0, slope),))
    if mode == "clamp":
        return _emit("leaky_clamp", np.where(pos, v, slope), (x,), lambda g: (g * pos,))
    raise ValueError(f"unknown leaky_relu mode {mode!r}")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": tanh,
    "elu": elu,
    "relu": relu,
    "identity": lambda x: x,
}


def row_softmax(x, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` False entries get probability 0."""
    x = as_tensor(x)
    v = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), v.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("row_softmax: a row has every entry masked")
        v = np.where(mask, v, -np.inf)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _emit("row_softmax", out, (x,), back)


def logsumexp(x) -> Tensor:
    """Stable log-sum-exp over the last axis."""
    x = as_tensor(x)
    v = x.data
    top = v.max(axis=-1, keepdims=True)
    e = np.exp(v - top)
    s = e.sum(axis=-1, keepdims=True)
    out = (np.log(s) + top)[..., 0]
    soft = e / s
    return _emit("logsumexp", out, (x,), lambda g: (g[..., None] * soft,))


def pick(x, index: np.ndarray) -> Tensor:
    """``x[i, index[i]]`` for a (B, C) tensor."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        gx = np.zeros(shape)
        gx[rows, index] = g
        return (gx,)

    return _emit("pick", x.data[rows, index], (x,), back)


# --- reductions --------------------------------------------------------------


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        return _emit("sum", np.array(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))
    value = x.data.sum(axis=axis)
    return _emit("sum", value, (x,),
                 lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    shape = x.shape
    return _emit("mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),))


# --- stochastic --------------------------------------------------------------


def dropout_mask(shape: Sequence[int], rate: float, rng: np.random.Generator,
                 training: bool = True) -> np.ndarray:
    """Inverted-dropout mask with entries 0 or 1 / (1 - rate); all ones in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# --- gradient checking -------------------------------------------------------


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` with respect to ``arr``, perturbed in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        up = f()
        arr[i] = orig - h
        down = f()
        arr[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a), np.asarray(b)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def norm_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """||a - b|| / max(||a||, ||b||, floor) over the whole array."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)
