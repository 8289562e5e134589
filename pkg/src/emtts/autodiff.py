"""Minimal reverse-mode automatic differentiation over numpy arrays.

Operations executed inside an active :class:`Tape` are recorded in order;
:func:`backward` walks the tape in reverse and accumulates gradients into the
leaf tensors (typically model parameters). Outside a tape, operations run as
plain numpy with no bookkeeping, which is what inference uses.

The convolution primitives used by the networks live in :mod:`emtts.layers`;
they are registered through the same :func:`primitive` hook exposed here.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "primitive",
    "backward",
    "gaussian_init",
    "softmax_columns",
    "grad_check",
    "GradientError",
]


class GradientError(RuntimeError):
    """Raised when a backward pass or gradient check cannot proceed."""


class Tensor:
    """Dense real array with an optional gradient slot.

    ``data`` is a numpy array of rank 0-3. ``grad`` is ``None`` until a
    backward pass reaches the tensor, after which it has the same shape as
    ``data``.
    """

    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "_produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._produced = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Parameter(Tensor):
    """Named trainable tensor; always ``requires_grad``."""

    __slots__ = ("name",)

    def __init__(self, name: str, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


class _Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive applications.

    Use as a context manager; every differentiable operation evaluated while
    the tape is active and that touches a ``requires_grad`` tensor is appended.
    Recording order is execution order, so it is already topological.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def primitive(op: str, out: np.ndarray, inputs: Sequence[Tensor],
              backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    """Wrap ``out`` as the result of a differentiable operation.

    ``backward`` maps the upstream gradient to one gradient (or ``None``) per
    entry of ``inputs``. Nothing is recorded when no tape is active or when no
    input requires a gradient.
    """
    result = Tensor(out)
    if _ACTIVE and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        result._produced = True
        _ACTIVE[-1].nodes.append(_Node(op, tuple(inputs), result, backward))
    return result


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Leaf gradients accumulate across calls; use :meth:`Tensor.zero_grad`
    (or :func:`zero_grads`) to reset them.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._produced:
                prev = grads.get(id(inp))
                grads[id(inp)] = gi if prev is None else prev + gi
            elif not np.isfinite(gi).all():
                raise GradientError(f"non-finite gradient reached a leaf through {node.op}")
            elif inp.grad is None:
                inp.grad = np.array(gi, dtype=inp.data.dtype, copy=True)
            else:
                inp.grad += gi
    if not loss._produced and loss.requires_grad:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def gaussian_init(shape: Sequence[int], stddev: float, seed: int, dtype=np.float64) -> Tensor:
    """I.i.d. normal(0, stddev**2) tensor from a seeded PCG64 stream."""
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ValueError(f"shape must have positive extents, got {shape}")
    if not stddev > 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(0.0, stddev, size=shape).astype(dtype))


# ---------------------------------------------------------------------------
# elementwise and structural primitives


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return primitive("add", a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.shape, b.shape
    return primitive("sub", a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    return primitive("mul", ad * bd, (a, b),
                     lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return primitive("matmul", ad @ bd, (a, b), back)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return primitive("transpose", np.swapaxes(x.data, -1, -2), (x,),
                     lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.data.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        if _needs_add_at(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return primitive("getitem", x.data[index], (x,), back)


def _needs_add_at(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return primitive("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors,
                     lambda g: tuple(np.split(g, sizes, axis=axis)))


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)
    return primitive("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return primitive("relu", np.where(pos, x.data, 0.0).astype(x.data.dtype), (x,),
                     lambda g: (g * pos,))


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return primitive("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return primitive("log", np.log(xd), (x,), lambda g: (g / xd,))


def tabs(x: Tensor) -> Tensor:
    sign = np.sign(x.data)
    return primitive("abs", np.abs(x.data), (x,), lambda g: (g * sign,))


def tsum(x: Tensor, axis=None) -> Tensor:
    shape = x.shape

    def back(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return primitive("sum", np.asarray(x.data.sum(axis=axis)), (x,), back)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis), 1.0 / float(n))


def softmax(x: Tensor, axis: int) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return primitive("softmax", y, (x,), back)


def softmax_columns(m: Tensor) -> Tensor:
    """Normalize each column of an ``N x T`` (or batched ``B x N x T``) matrix."""
    return softmax(_as_tensor(m), axis=-2)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return primitive("embedding", table.data[ids], (table,), back)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rate`` is 0 or ``rng`` is None."""
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return primitive("dropout", x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# finite-difference checking


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
               max_coords: int | None = 24, seed: int = 0, floor: float = 1e-8) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f`` is re-evaluated on the current parameter values and must be
    deterministic. At most ``max_coords`` coordinates per parameter are
    sampled (all when ``None``). Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, floor)``; raise ``floor`` above the
    difference quotient's roundoff when many true gradients are zero.
    """
    for p in params:
        if p.data.dtype != np.float64:
            raise GradientError("grad_check requires 64-bit parameters")
        p.grad = None
    with Tape() as tape:
        loss = f()
    if not np.isfinite(loss.data).all():
        raise GradientError("loss is not finite")
    backward(loss, tape)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if max_coords is None or n <= max_coords else \
            np.sort(rng.choice(n, size=max_coords, replace=False))
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise GradientError(f"non-finite loss while perturbing {_label(p)}[{i}]")
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst


def _label(p: Tensor) -> str:
    return getattr(p, "name", "tensor")
