"""Dense float64 arrays with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array and, when any of its inputs requires a
gradient, remembers the inputs and a vector-Jacobian product.  Calling
:func:`backward_grad` on a scalar output walks that tape in reverse
topological order.

Broadcasting is deliberately narrow: elementwise operands must share a shape,
except a 1-d bias over the last axis or a python/0-d scalar.  Anything else
raises :class:`ShapeError`.
"""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "NumericError",
    "as_tensor",
    "leaf",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "concat",
    "slice_cols",
    "repeat_rows",
    "reshape",
    "sigmoid",
    "tanh",
    "softplus",
    "exp",
    "log",
    "clip",
    "sum",
    "logsumexp",
    "forward_eval",
    "backward_grad",
    "value_and_grad",
    "gradient_errors",
    "finite_difference_check",
]


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class NumericError(FloatingPointError):
    """A value that must be finite is not."""


class Tensor:
    __slots__ = ("value", "parents", "vjp", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), vjp=None, op="const", requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op}{label}, shape={self.shape})"

    __array_priority__ = 100

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def leaf(value, name=None) -> Tensor:
    """A differentiable input (parameter or bound input)."""
    return Tensor(np.array(value, dtype=np.float64), op="leaf", requires_grad=True, name=name)


def _node(value, parents, vjp, op):
    if any(p.requires_grad for p in parents):
        return Tensor(value, parents, vjp, op, requires_grad=True)
    return Tensor(value, op=op)


# -- elementwise binary ------------------------------------------------------

def _pair_kind(op, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0:
        return "scalar_b"
    if a.ndim == 0:
        return "scalar_a"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "bias_b"
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return "bias_a"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    return g.reshape(-1, shape[0]).sum(axis=0)


def _binary(op, a, b, fwd, da, db):
    a, b = as_tensor(a), as_tensor(b)
    _pair_kind(op, a, b)
    out = fwd(a.value, b.value)

    def vjp(g):
        return (
            _unbroadcast(da(g, a.value, b.value, out), a.shape),
            _unbroadcast(db(g, a.value, b.value, out), b.shape),
        )

    return _node(out, (a, b), vjp, op)


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b) -> Tensor:
    return _binary(
        "div", a, b, np.divide, lambda g, x, y, o: g / y, lambda g, x, y, o: -g * o / y
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,), "neg")


# -- structural --------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: no operands")
    lead = ts[0].shape[:-1]
    for t in ts:
        if t.ndim == 0 or t.shape[:-1] != lead:
            raise ShapeError(f"concat: leading dims differ: {[t.shape for t in ts]}")
    if axis not in (-1, ts[0].ndim - 1):
        raise ShapeError("concat: only the last axis is supported")
    widths = np.cumsum([t.shape[-1] for t in ts])[:-1]
    out = np.concatenate([t.value for t in ts], axis=-1)

    def vjp(g):
        return tuple(np.split(g, widths, axis=-1))

    return _node(out, tuple(ts), vjp, "concat")


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    width = a.shape[-1]
    if not 0 <= start <= stop <= width:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for width {width}")

    def vjp(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return (full,)

    return _node(a.value[..., start:stop], (a,), vjp, "slice")


def repeat_rows(a, k: int) -> Tensor:
    """Repeat each row ``k`` times consecutively: row ``i*k + j`` is ``a[i]``."""
    a = as_tensor(a)
    if a.ndim == 0 or k < 1:
        raise ShapeError(f"repeat_rows: need k >= 1 and ndim >= 1, got k={k}, shape {a.shape}")
    n = a.shape[0]

    def vjp(g):
        return (g.reshape((n, k) + a.shape[1:]).sum(axis=1),)

    return _node(np.repeat(a.value, k, axis=0), (a,), vjp, "repeat_rows")


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.value.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from exc
    return _node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


# -- elementwise unary -------------------------------------------------------

def _sigmoid_np(x):
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid_np(a.value)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return _node(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid_np(x),), "softplus")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    return _node(np.log(x), (a,), lambda g: (g / x,), "log")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    a = as_tensor(a)
    x = a.value
    inside = (x >= lo) & (x <= hi)
    return _node(np.clip(x, lo, hi), (a,), lambda g: (g * inside,), "clip")


# -- reductions --------------------------------------------------------------

def sum(a, axis: int | None = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    if axis is None:
        return _node(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),), "sum")
    ax = axis % a.ndim

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, ax), a.shape).copy(),)

    return _node(a.value.sum(axis=ax), (a,), vjp, "sum")


def logsumexp(a, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    x = a.value
    ax = axis % a.ndim
    m = np.max(x, axis=ax, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    s = np.sum(np.exp(x - m), axis=ax, keepdims=True)
    out_keep = np.log(s) + m
    weights = np.exp(x - out_keep)

    def vjp(g):
        return (np.expand_dims(g, ax) * weights,)

    return _node(np.squeeze(out_keep, axis=ax), (a,), vjp, "logsumexp")


# -- evaluation and differentiation -----------------------------------------

def forward_eval(fn: Callable[..., Tensor | Mapping[str, Tensor]], inputs: Mapping[str, object],
                 required: Sequence[str] | None = None) -> dict[str, np.ndarray] | np.ndarray:
    """Evaluate ``fn`` on named inputs and return plain arrays.

    ``required`` lists input names that must be bound; a missing one raises
    ``KeyError`` naming it.  Inputs are wrapped as constants, so the call has
    no effect on any tape.
    """
    for name in required or ():
        if name not in inputs:
            raise KeyError(f"unbound graph input {name!r}")
    bound = {k: as_tensor(v) for k, v in inputs.items()}
    out = fn(**bound)
    if isinstance(out, Mapping):
        return {k: np.array(as_tensor(v).value) for k, v in out.items()}
    return np.array(as_tensor(out).value)


def _topological(output: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward_grad(output: Tensor, wrt: Sequence[Tensor] | Mapping[str, Tensor]):
    """Gradient of a scalar ``output`` with respect to each tensor in ``wrt``.

    Tensors the output does not depend on get a zero gradient.  Returns a list
    for a sequence and a dict for a mapping.
    """
    if output.value.size != 1:
        raise ShapeError(f"backward_grad: output must be scalar, got shape {output.shape}")
    grads: dict[int, np.ndarray] = {}
    if output.requires_grad:
        grads[id(output)] = np.ones(output.shape)
        for node in reversed(_topological(output)):
            g = grads.pop(id(node), None) if node.vjp is not None else grads.get(id(node))
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    if isinstance(wrt, Mapping):
        return {k: grads.get(id(t), np.zeros(t.shape)).reshape(t.shape) for k, t in wrt.items()}
    return [grads.get(id(t), np.zeros(t.shape)).reshape(t.shape) for t in wrt]


def value_and_grad(loss: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray]):
    """Evaluate ``loss`` on leaf copies of ``params``; return (value, grads)."""
    leaves = {k: leaf(v, name=k) for k, v in params.items()}
    out = loss(leaves)
    return float(out.value), backward_grad(out, leaves)


def _eval_scalar(loss, params) -> float:
    value = float(as_tensor(loss({k: Tensor(v) for k, v in params.items()})).value)
    if not np.isfinite(value):
        raise NumericError("finite_difference_check: loss is not finite")
    return value


def gradient_errors(loss: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
                    step: float = 1e-5, grads: Mapping[str, np.ndarray] | None = None) -> dict[str, float]:
    """Max relative error of analytic vs central-difference gradient, per parameter."""
    if step <= 0:
        raise ValueError("step must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if grads is None:
        _, grads = value_and_grad(loss, params)
    errors = {}
    for name, p in params.items():
        analytic = np.asarray(grads[name]).reshape(p.shape)
        worst = 0.0
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = _eval_scalar(loss, params)
            p[idx] = orig - step
            down = _eval_scalar(loss, params)
            p[idx] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[idx]
            denom = max(abs(a), abs(numeric), 1e-12)
            worst = max(worst, abs(a - numeric) / denom)
        errors[name] = worst
    return errors


def finite_difference_check(loss, params, step: float = 1e-5, grads=None) -> float:
    """Max over all parameter entries of ``|a - n| / max(|a|, |n|, 1e-12)``."""
    errs = gradient_errors(loss, params, step=step, grads=grads)
    return max(errs.values(), default=0.0)
