"""Reverse-mode automatic differentiation over dense float64 arrays.

Deliberately small: just the primitives the decoder kernels and losses need,
plus a central-finite-difference checker. Broadcasting follows numpy; the
gradient of a broadcast operand is summed back down to the operand's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ContractError, DivergenceError


class Tensor:
    """A dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._parents = tuple(_parents)
        self._vjp = _vjp

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every reachable tensor
        with requires_grad; existing .grad buffers are added to, not reset."""
        if self.data.size != 1:
            raise ContractError(f"backward() needs a scalar, got shape {self.shape}")
        order = _toposort(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t.requires_grad and t._vjp is None:
                # leaf
                t.grad = g if t.grad is None else t.grad + g
                continue
            if t._vjp is None:
                continue
            for p, pg in zip(t._parents, t._vjp(g)):
                if pg is None or not p.requires_grad:
                    continue
                if id(p) in grads:
                    grads[id(p)] = grads[id(p)] + pg
                elif p._vjp is None:
                    p.grad = pg if p.grad is None else p.grad + pg
                else:
                    grads[id(p)] = pg

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- primitives -------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def neg(a) -> Tensor:
    a = _wrap(a)
    return Tensor(-a.data, _parents=(a,), _vjp=lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def vjp(g):
        ga = _reduce_to(g / b.data, a.shape)
        gb = _reduce_to(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2D operands, got {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def transpose(a) -> Tensor:
    a = _wrap(a)
    if a.ndim != 2:
        raise ContractError("transpose expects a matrix")
    return Tensor(a.data.T, _parents=(a,), _vjp=lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    old = a.shape
    return Tensor(a.data.reshape(shape), _parents=(a,), _vjp=lambda g: (g.reshape(old),))


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(ts), _vjp=vjp)


def split_rows(a, sizes) -> list[Tensor]:
    """Split a matrix into consecutive row blocks of the given sizes."""
    a = _wrap(a)
    if sum(sizes) != a.shape[0]:
        raise ContractError("split sizes must cover all rows")
    outs = []
    start = 0
    for n in sizes:
        sl = slice(start, start + n)

        def vjp(g, sl=sl):
            full = np.zeros_like(a.data)
            full[sl] = g
            return (full,)

        outs.append(Tensor(a.data[sl], _parents=(a,), _vjp=vjp))
        start += n
    return outs


def asum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def amean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    return asum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _vjp=lambda g: (g * mask,))


# Floor on the local slope used in sigmoid's backward pass. The true slope
# p(1-p) underflows to exact zero once |logit| grows past ~745, which would
# freeze a saturated unit no matter how hard the loss pulls; the floor is
# far below any slope a finite-difference check can resolve but keeps the
# pull direction alive for adaptive optimizers.
SIGMOID_SLOPE_FLOOR = 1e-12


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    out = expit(a.data)
    return Tensor(
        out,
        _parents=(a,),
        _vjp=lambda g: (g * (out * (1.0 - out) + SIGMOID_SLOPE_FLOOR),),
    )


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * out,))


def log(a) -> Tensor:
    a = _wrap(a)
    return Tensor(np.log(a.data), _parents=(a,), _vjp=lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)
    return Tensor(out, _parents=(a,), _vjp=lambda g: (g * 0.5 / out,))


def power(a, p: float) -> Tensor:
    """Elementwise a**p for a fixed real exponent (a > 0 unless p is a
    non-negative integer)."""
    a = _wrap(a)
    out = np.power(a.data, p)

    def vjp(g):
        if p == 0.0:
            return (np.zeros_like(a.data),)
        return (g * p * np.power(a.data, p - 1.0),)

    return Tensor(out, _parents=(a,), _vjp=vjp)


def absolute(a) -> Tensor:
    a = _wrap(a)
    return Tensor(np.abs(a.data), _parents=(a,), _vjp=lambda g: (g * np.sign(a.data),))


def maximum_scalar(a, c: float) -> Tensor:
    a = _wrap(a)
    mask = a.data > c
    return Tensor(np.where(mask, a.data, c), _parents=(a,), _vjp=lambda g: (g * mask,))


def minimum_scalar(a, c: float) -> Tensor:
    a = _wrap(a)
    mask = a.data < c
    return Tensor(np.where(mask, a.data, c), _parents=(a,), _vjp=lambda g: (g * mask,))


def clip(a, lo: float, hi: float) -> Tensor:
    return minimum_scalar(maximum_scalar(a, lo), hi)


def clamp_values(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi] for numerical safety; the gradient passes
    through unchanged.

    Unlike :func:`clip`, an input outside the range keeps its full gradient,
    so a loss evaluated on the clamped value can still pull a saturated
    input back. Use :func:`clip` when the clamp is part of the model math
    and the flat regions really have zero slope.
    """
    a = _wrap(a)
    return Tensor(np.clip(a.data, lo, hi), _parents=(a,), _vjp=lambda g: (g,))


def maximum(a, b) -> Tensor:
    """Elementwise max of two tensors; ties route the gradient to ``a``."""
    a, b = _wrap(a), _wrap(b)
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return _reduce_to(g * take_a, a.shape), _reduce_to(g * ~take_a, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def minimum(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return _reduce_to(g * take_a, a.shape), _reduce_to(g * ~take_a, b.shape)

    return Tensor(out, _parents=(a, b), _vjp=vjp)


def assert_finite(t: Tensor, where: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise DivergenceError(f"non-finite values in {where}")
    return t


# -- gradient checking -------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_err: float
    per_input: list[float] = field(default_factory=list)

    def __str__(self) -> str:
        return f"grad_check max rel err {self.max_rel_err:.3e} (per input: " + ", ".join(
            f"{e:.2e}" for e in self.per_input
        ) + ")"


def grad_check(
    fn,
    inputs: list[Tensor],
    step: float = 1e-5,
    rel_floor: float = 1e-2,
    sample: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn(*inputs)`` against central
    finite differences.

    The output tensor is contracted with a fixed random projection so every
    output element participates. Relative error uses a small absolute floor
    (``rel_floor``) so near-zero entries do not blow the ratio up. ``sample``
    probes at most that many coordinates per input (all when None); the probe
    set is seeded, so the check is deterministic.
    """
    for t in inputs:
        if not t.requires_grad:
            raise ContractError("grad_check inputs must have requires_grad=True")
        t.grad = None
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    if not np.all(np.isfinite(out.data)):
        raise DivergenceError("non-finite forward output in grad_check")
    proj = rng.standard_normal(out.data.shape)
    loss = asum(out * Tensor(proj))
    loss.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs
    ]

    def loss_value() -> float:
        o = fn(*inputs)
        return float((o.data * proj).sum())

    per_input: list[float] = []
    for idx, t in enumerate(inputs):
        flat = t.data.ravel()
        agrad = analytic[idx].ravel()
        n = flat.size
        if sample is not None and sample < n:
            coords = rng.choice(n, size=sample, replace=False)
        else:
            coords = np.arange(n)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            lp = loss_value()
            flat[c] = orig - step
            lm = loss_value()
            flat[c] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise DivergenceError("non-finite perturbed output in grad_check")
            fd = (lp - lm) / (2.0 * step)
            ad_g = agrad[c]
            rel = abs(ad_g - fd) / max(abs(ad_g), abs(fd), rel_floor)
            if rel > worst:
                worst = rel
        per_input.append(worst)
    return GradCheckReport(max(per_input) if per_input else 0.0, per_input)
