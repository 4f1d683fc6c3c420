"""Dense f64 tensors with a reverse-mode tape.

Every op appends one node to the tape of its inputs; creation order is
therefore a topological order and ``backward`` simply walks it in reverse.
Arrays may carry leading batch axes; element-wise ops broadcast with numpy
rules and reduce gradients back to the operand shapes.
"""

from __future__ import annotations

import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError


class Tensor:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("data", "tape", "node", "name")

    def __init__(self, data: np.ndarray, tape: "Tape", node: int, name: Optional[str] = None):
        self.data = data
        self.tape = tape
        self.node = node
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, node={self.node})"

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
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "vjp", "op")

    def __init__(self, inputs: Tuple[int, ...], vjp, op: str):
        self.inputs = inputs
        self.vjp = vjp
        self.op = op


class Tape:
    """Ordered record of primitive ops plus a registry of named parameters."""

    def __init__(self, check_finite: bool = True):
        self.nodes: List[_Node] = []
        self.params: Dict[str, int] = {}
        self.shapes: Dict[str, Tuple[int, ...]] = {}
        self.check_finite = check_finite

    def __len__(self) -> int:
        return len(self.nodes)

    def _push(self, data: np.ndarray, inputs: Tuple[int, ...], vjp, op: str) -> Tensor:
        if self.check_finite and not np.isfinite(data).all():
            raise NumericError(f"non-finite values produced by '{op}'")
        self.nodes.append(_Node(inputs, vjp, op))
        return Tensor(data, self, len(self.nodes) - 1)

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise UsageError(f"parameter '{name}' registered twice")
        t = self._push(np.asarray(value, dtype=np.float64), (), None, "param")
        t.name = name
        self.params[name] = t.node
        self.shapes[name] = t.shape
        return t

    def const(self, value) -> Tensor:
        return self._push(np.asarray(value, dtype=np.float64), (), None, "const")


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Tensor):
            return x.tape
    raise UsageError("at least one operand must be a Tensor")


def _lift(x, tape: Tape) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise UsageError("operands recorded on different tapes")
        return x
    return tape.const(x)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ----------------------------------------------------------------------------
# element-wise arithmetic
# ----------------------------------------------------------------------------


def add(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return tape._push(
        a.data + b.data,
        (a.node, b.node),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        "add",
    )


def sub(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    sa, sb = a.shape, b.shape
    return tape._push(
        a.data - b.data,
        (a.node, b.node),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        "sub",
    )


def mul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    ad, bd = a.data, b.data
    return tape._push(
        ad * bd,
        (a.node, b.node),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    ad, bd = a.data, b.data
    out = ad / bd
    return tape._push(
        out,
        (a.node, b.node),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
        "div",
    )


def neg(a: Tensor) -> Tensor:
    return a.tape._push(-a.data, (a.node,), lambda g: (-g,), "neg")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return a.tape._push(out, (a.node,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NumericError("log of non-positive value")
    return a.tape._push(np.log(x), (a.node,), lambda g: (g / x,), "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return a.tape._push(out, (a.node,), lambda g: (g / (2.0 * out),), "sqrt")


def square(a: Tensor) -> Tensor:
    x = a.data
    return a.tape._push(x * x, (a.node,), lambda g: (2.0 * g * x,), "square")


def softplus(a: Tensor) -> Tensor:
    """Overflow-safe ``log(1 + exp(x))``."""
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    # d/dx softplus = sigmoid(x), evaluated stably on both branches
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return a.tape._push(out, (a.node,), lambda g: (g * sig,), "softplus")


def clamp_min(a: Tensor, lo: float) -> Tensor:
    """``max(a, lo)``; the gradient is zero where the floor is active."""
    x = a.data
    keep = x > lo
    return a.tape._push(np.where(keep, x, lo), (a.node,), lambda g: (g * keep,), "clamp_min")


def minimum(*xs: Tensor) -> Tensor:
    """Element-wise minimum; the gradient goes to the first argmin."""
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    stack = np.stack(np.broadcast_arrays(*[x.data for x in xs]))
    idx = np.argmin(stack, axis=0)
    shapes = [x.shape for x in xs]

    def vjp(g):
        return tuple(_unbroadcast(g * (idx == i), s) for i, s in enumerate(shapes))

    return tape._push(stack.min(axis=0), tuple(x.node for x in xs), vjp, "minimum")


def stop_gradient(a: Tensor) -> Tensor:
    return a.tape.const(a.data)


# ----------------------------------------------------------------------------
# shape and reductions
# ----------------------------------------------------------------------------


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return a.tape._push(a.data.reshape(shape), (a.node,), lambda g: (g.reshape(old),), "reshape")


def swap_last(a: Tensor) -> Tensor:
    return a.tape._push(np.swapaxes(a.data, -1, -2), (a.node,), lambda g: (np.swapaxes(g, -1, -2),), "swap_last")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape._push(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a.node,), vjp, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / float(n))


def mean_pool(x: Tensor) -> Tensor:
    """Average over the time axis (second to last) of ``[..., T, d]``."""
    if x.shape[-2] < 1:
        raise DimensionError("mean_pool needs T >= 1")
    return mean(x, axis=-2)


# ----------------------------------------------------------------------------
# linear algebra
# ----------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return tape._push(ad @ bd, (a.node, b.node), vjp, "matmul")


def conv1d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Length-3 temporal convolution over ``[..., T, d_in]`` with zero padding.

    ``y[t] = b + x[t-1] @ w[0] + x[t] @ w[1] + x[t+1] @ w[2]``.
    """
    tape = _tape_of(x, w, b)
    x, w, b = _lift(x, tape), _lift(w, tape), _lift(b, tape)
    T, d_in = x.shape[-2], x.shape[-1]
    if T < 1:
        raise DimensionError("conv1d_same needs T >= 1")
    if w.shape[:2] != (3, d_in) or w.ndim != 3:
        raise DimensionError(f"kernel shape {w.shape} does not match input width {d_in}")
    if b.shape != (w.shape[2],):
        raise DimensionError(f"bias shape {b.shape} does not match kernel {w.shape}")
    xd, wd = x.data, w.data
    pad = [(0, 0)] * (xd.ndim - 2) + [(1, 1), (0, 0)]
    xp = np.pad(xd, pad)
    # tap k reads x[t + k - 1]
    taps = [xp[..., k : k + T, :] for k in range(3)]
    out = b.data + taps[0] @ wd[0] + taps[1] @ wd[1] + taps[2] @ wd[2]

    def vjp(g):
        gw = np.stack([
            (np.swapaxes(taps[k], -1, -2) @ g).reshape(-1, d_in, wd.shape[2]).sum(axis=0)
            for k in range(3)
        ])
        gxp = np.zeros_like(xp)
        for k in range(3):
            gxp[..., k : k + T, :] += g @ wd[k].T
        gx = gxp[..., 1 : T + 1, :]
        gb = g.reshape(-1, wd.shape[2]).sum(axis=0)
        return gx, gw, gb

    return tape._push(out, (x.node, w.node, b.node), vjp, "conv1d_same")


# ----------------------------------------------------------------------------
# softmax family
# ----------------------------------------------------------------------------


def softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    if not temperature > 0:
        raise ConfigError(f"softmax temperature must be positive, got {temperature}")
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return ((p * (g - (g * p).sum(axis=axis, keepdims=True))) / temperature,)

    return x.tape._push(p, (x.node,), vjp, "softmax")


def log_softmax(x: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    z = x.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def vjp(g):
        return ((g - p * g.sum(axis=axis, keepdims=True)) / temperature,)

    return x.tape._push(out, (x.node,), vjp, "log_softmax")


def pick(x: Tensor, index: np.ndarray) -> Tensor:
    """Select ``x[i, index[i]]`` from a ``[B, C]`` tensor."""
    rows = np.arange(x.shape[0])
    index = np.asarray(index)
    shape = x.shape

    def vjp(g):
        gx = np.zeros(shape)
        gx[rows, index] = g
        return (gx,)

    return x.tape._push(x.data[rows, index], (x.node,), vjp, "pick")


# ----------------------------------------------------------------------------
# reverse pass
# ----------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Reverse-mode gradients of scalar ``loss`` for every registered parameter."""
    if loss.tape is not tape:
        raise UsageError("loss was not recorded on this tape")
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: Dict[int, np.ndarray] = {loss.node: np.ones_like(loss.data)}
    for i in range(loss.node, -1, -1):
        node = tape.nodes[i]
        if node.vjp is None or i not in grads:
            continue
        g = grads.pop(i)
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    out = {}
    for name, nid in tape.params.items():
        g = grads.get(nid)
        out[name] = g if g is not None else np.zeros(tape.shapes[name])
    return out


def grad_check(
    f: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``f`` receives a dict of parameter tensors (registered on a fresh tape)
    and returns a scalar tensor. Relative error is
    ``|a - b| / max(|a|, |b|, 1e-8)``.
    """
    if not eps > 0:
        raise UsageError("eps must be positive")

    def evaluate(values):
        tape = Tape()
        ts = {k: tape.param(k, v) for k, v in values.items()}
        return tape, f(ts)

    tape, loss = evaluate(params)
    analytic = backward(tape, loss)
    worst = 0.0
    for name, value in params.items():
        value = np.asarray(value, dtype=np.float64)
        flat = value.reshape(-1)
        for j in range(flat.size):
            plus = flat.copy()
            minus = flat.copy()
            plus[j] += eps
            minus[j] -= eps
            fp = float(evaluate({**params, name: plus.reshape(value.shape)})[1].data)
            fm = float(evaluate({**params, name: minus.reshape(value.shape)})[1].data)
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"non-finite objective while perturbing {name}[{j}]")
            numeric = (fp - fm) / (2.0 * eps)
            a = float(analytic[name].reshape(-1)[j])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
