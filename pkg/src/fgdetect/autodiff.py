"""Reverse-mode differentiation over the array primitives used in this package.

The engine is a small tape: every primitive appends the output node to a
per-graph list in creation order, and ``backward`` replays that list in
reverse. Values are numpy arrays (float64); broadcasting in ``add``/``mul``
is supported and gradients are summed back to the operand shapes.

The primitive set is deliberately closed: add, mul, neg, exp, log, sigmoid,
clamp, logsumexp, masked softmax, matmul with a constant matrix, gather /
segment-sum along the last axis, reshape, row selection and sum. ``power``
for a positive base is provided as exp(exponent * log(base)) on top of these.
"""

from __future__ import annotations

import numpy as np

_CHECK_FINITE = False


class ForwardNumericsError(FloatingPointError):
    """A primitive produced NaN/Inf during a checked forward pass."""


def _check(value: np.ndarray, op: str) -> None:
    if _CHECK_FINITE and not np.all(np.isfinite(value)):
        raise ForwardNumericsError(f"non-finite value produced by primitive '{op}'")


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def backward(self):
        if self.value.ndim != 0 and self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = _toposort(self)
        for node in order:
            node.grad = np.zeros_like(node.value)
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(np.array(x, dtype=float), requires_grad=True, op="param")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- primitives --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value
    _check(out, "add")

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.value.shape)

    return Tensor(out, parents=(a, b), backward=bwd, op="add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value
    _check(out, "mul")

    def bwd(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.value, a.value.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.value, b.value.shape)

    return Tensor(out, parents=(a, b), backward=bwd, op="mul")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.grad -= g

    return Tensor(-a.value, parents=(a,), backward=bwd, op="neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    _check(out, "exp")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * out

    return Tensor(out, parents=(a,), backward=bwd, op="exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.value)
    _check(out, "log")

    def bwd(g):
        if a.requires_grad:
            a.grad += g / a.value

    return Tensor(out, parents=(a,), backward=bwd, op="log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.value)
    pos = a.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    ez = np.exp(a.value[~pos])
    out[~pos] = ez / (1.0 + ez)
    _check(out, "sigmoid")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * out * (1.0 - out)

    return Tensor(out, parents=(a,), backward=bwd, op="sigmoid")


def power(base, exponent) -> Tensor:
    """base ** exponent for strictly positive base, via exp(exponent*log(base))."""
    return exp(mul(as_tensor(exponent), log(as_tensor(base))))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient is zero outside [lo, hi] and identity inside."""
    a = as_tensor(a)
    out = np.clip(a.value, lo, hi)
    inside = (a.value >= lo) & (a.value <= hi)

    def bwd(g):
        if a.requires_grad:
            a.grad += g * inside

    return Tensor(out, parents=(a,), backward=bwd, op="clamp")


def logsumexp(a, axis: int = -1) -> Tensor:
    """Stable log-sum-exp along one axis (fused primitive, exact gradient)."""
    a = as_tensor(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.value - m)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    _check(out, "logsumexp")

    def bwd(g):
        if a.requires_grad:
            a.grad += np.expand_dims(g, axis) * (e / s)

    return Tensor(out, parents=(a,), backward=bwd, op="logsumexp")


def masked_softmax(a, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False give exactly 0."""
    a = as_tensor(a)
    v = a.value
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    m = np.max(v, axis=axis, keepdims=True)
    if not np.all(np.isfinite(m)):
        raise ValueError("softmax over fully masked slice")
    e = np.exp(v - m)
    out = e / e.sum(axis=axis, keepdims=True)
    _check(out, "softmax")

    def bwd(g):
        if a.requires_grad:
            inner = (g * out).sum(axis=axis, keepdims=True)
            a.grad += (g - inner) * out

    return Tensor(out, parents=(a,), backward=bwd, op="softmax")


def matmul_const(a, m: np.ndarray) -> Tensor:
    """a @ m with a constant matrix m; contraction over the last axis of a."""
    a = as_tensor(a)
    m = np.asarray(m, dtype=float)
    out = a.value @ m
    _check(out, "matmul_const")

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ m.T

    return Tensor(out, parents=(a,), backward=bwd, op="matmul_const")


def take_last(a, idx: np.ndarray) -> Tensor:
    """Gather along the last axis: out[..., i] = a[..., idx[i]] (idx any shape)."""
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = a.value[..., idx]

    def bwd(g):
        if a.requires_grad:
            flat_g = g.reshape(g.shape[: a.value.ndim - 1] + (idx.size,))
            acc = np.zeros_like(a.grad)
            np.add.at(acc, (..., idx.ravel()), flat_g)
            a.grad += acc

    return Tensor(out, parents=(a,), backward=bwd, op="take_last")


def segment_sum_last(a, starts: np.ndarray, lengths: np.ndarray) -> Tensor:
    """Sum contiguous segments of the second-to-last axis.

    ``a`` has shape (..., n_items, C); segment s covers rows
    starts[s] : starts[s]+lengths[s]; output shape (..., n_segments, C).
    """
    a = as_tensor(a)
    starts = np.asarray(starts)
    lengths = np.asarray(lengths)
    nonempty = lengths > 0
    out = np.zeros(a.value.shape[:-2] + (starts.size, a.value.shape[-1]))
    if nonempty.any():
        # with empty segments dropped, consecutive kept starts are exactly
        # the reduceat boundaries of the non-empty segments
        out[..., nonempty, :] = np.add.reduceat(a.value, starts[nonempty], axis=-2)
    _check(out, "segment_sum")

    def bwd(g):
        if a.requires_grad:
            a.grad += np.repeat(g, lengths, axis=-2)

    return Tensor(out, parents=(a,), backward=bwd, op="segment_sum")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.value.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a.grad += g.reshape(a.value.shape)

    return Tensor(out, parents=(a,), backward=bwd, op="reshape")


def take_row(a, i: int) -> Tensor:
    """Select row i along axis 0."""
    a = as_tensor(a)

    def bwd(g):
        if a.requires_grad:
            a.grad[i] += g

    return Tensor(a.value[i], parents=(a,), backward=bwd, op="take_row")


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis)
    _check(out, "sum")

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a.grad += g
            else:
                a.grad += np.expand_dims(g, axis)

    return Tensor(out, parents=(a,), backward=bwd, op="sum")


def _half_masks(degree: int) -> tuple[np.ndarray, np.ndarray]:
    c = np.arange(2**degree)
    bits = (c[:, None] >> np.arange(degree)[None, :]) & 1
    pos = (bits == 0).astype(float)  # (C, d), config has x_j = +1
    return pos, 1.0 - pos


def spa_factor_update(table, msgs, degree: int) -> Tensor:
    """Fused sum-product factor-to-variable update in LLR form.

    ``table``: log tables, shape (..., F, 2**degree); ``msgs``: incoming
    variable-to-factor LLRs, shape (..., F, degree). Output has the shape of
    ``msgs``. For output edge p the own incoming message is excluded:

        out_p = LSE_{c: x_p=+1} A(c) - LSE_{c: x_p=-1} A(c) - msgs_p,

    with A(c) = table(c) + sum_j sign_j(c) * msgs_j / 2.
    """
    table, msgs = as_tensor(table), as_tensor(msgs)
    from .graph import sign_matrix

    s = sign_matrix(degree)  # (d, C)
    pos, negm = _half_masks(degree)  # (C, d)
    a_val = table.value + (msgs.value @ s) * 0.5
    amax = a_val.max(axis=-1, keepdims=True)
    e = np.exp(a_val - amax)
    zpos = e @ pos
    zneg = e @ negm
    # a fully one-sided factor yields z = 0 and an infinite LLR, which the
    # caller clamps; suppress the benign log(0) warning
    with np.errstate(divide="ignore"):
        out = np.log(zpos) - np.log(zneg) - msgs.value
    if _CHECK_FINITE and np.isnan(out).any():
        raise ForwardNumericsError("NaN in spa_factor_update")

    def bwd(g):
        # saturated outputs (z = 0) arrive with zero upstream gradient from
        # the clamp; keep 0/0 from poisoning the rest of the batch
        apos = np.where(zpos > 0.0, g / np.where(zpos > 0.0, zpos, 1.0), 0.0)
        aneg = np.where(zneg > 0.0, -g / np.where(zneg > 0.0, zneg, 1.0), 0.0)
        da = e * (apos @ pos.T + aneg @ negm.T)
        if table.requires_grad:
            table.grad += da
        if msgs.requires_grad:
            msgs.grad += (da @ s.T) * 0.5 - g

    return Tensor(out, parents=(table, msgs), backward=bwd, op="spa_factor_update")


# -- harness -----------------------------------------------------------------


def record_and_backprop(computation, params: list[Tensor]):
    """Run ``computation(params) -> scalar Tensor`` and return (value, grads).

    The forward pass checks every primitive for NaN/Inf and aborts with the
    offending primitive named. Gradients come back as a list of numpy arrays
    aligned with ``params``.
    """
    global _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        loss = computation(params)
    finally:
        _CHECK_FINITE = False
    loss.backward()
    grads = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.value)
        for p in params
    ]
    return float(loss.value), grads


def finite_difference_check(computation, values: list[np.ndarray], step: float) -> float:
    """Max relative error of backprop gradients vs central differences.

    ``computation`` maps a list of parameter Tensors to a scalar Tensor.
    The relative error denominator is max(|g|, 1e-8) per coordinate.
    """
    if step <= 0:
        raise ValueError("step must be > 0")
    params = [parameter(v) for v in values]
    _, grads = record_and_backprop(computation, params)

    def evaluate(vals):
        return float(computation([Tensor(v) for v in vals]).value)

    worst = 0.0
    for k, v in enumerate(values):
        flat = v.ravel()
        g = grads[k].ravel()
        for i in range(flat.size):
            orig = flat[i]
            if not np.isfinite(orig):
                if g[i] != 0.0:
                    worst = max(worst, abs(g[i]))
                continue
            perturbed = [w.astype(float).copy() for w in values]
            perturbed[k].ravel()[i] = orig + step
            f_hi = evaluate(perturbed)
            perturbed[k].ravel()[i] = orig - step
            f_lo = evaluate(perturbed)
            fd = (f_hi - f_lo) / (2.0 * step)
            err = abs(fd - g[i]) / max(abs(g[i]), 1e-8)
            worst = max(worst, err)
    return worst
