"""Dense arrays with reverse-mode automatic differentiation.

Values are float64 numpy arrays wrapped in :class:`GraphValue` nodes.  Every
operation records its parents and a backward closure; ``backward()`` walks the
graph once in reverse topological order and accumulates gradients additively.
Broadcast support is deliberately restricted to scalars and trailing
dimensions so every backward rule stays simple and testable.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, GraphError, NumericError

DenseArray = np.ndarray

LAYERNORM_EPS = 1e-5


def _all_finite(arr: np.ndarray) -> bool:
    # single reduction: any NaN/Inf poisons the sum
    return bool(np.isfinite(arr.sum()))


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if not _all_finite(arr):
        raise NumericError("non-finite value entering the graph")
    return arr


class GraphValue:
    """A node in the differentiation graph: a value plus its gradient slot."""

    __slots__ = ("value", "_grad", "parents", "_backward_fn", "op", "_backward_done")

    def __init__(self, data, parents=(), backward_fn=None, op="leaf"):
        self.value = _as_array(data)
        self._grad = None          # allocated lazily; None means all-zero
        self.parents = tuple(parents)
        self._backward_fn = backward_fn
        self.op = op
        self._backward_done = False

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.value)
        return self._grad

    @grad.setter
    def grad(self, value):
        self._grad = value

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self._grad = None
        self._backward_done = False

    def __repr__(self):
        return f"GraphValue(op={self.op}, shape={self.value.shape})"


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not _all_finite(out):
        raise NumericError(f"{op} produced NaN/Inf")
    return out


def _make(out, parents, backward_fn, op):
    return GraphValue(_check_finite(np.asarray(out, dtype=np.float64), op),
                      parents=parents, backward_fn=backward_fn, op=op)


def constant(data) -> GraphValue:
    """A leaf node; gradients accumulate into it but nothing flows further."""
    return GraphValue(data)


def parameter(data) -> GraphValue:
    return GraphValue(data)


def _reduce_broadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum `grad` down to `shape` for scalar / trailing-dim broadcast."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    return grad.sum(axis=tuple(range(extra))).reshape(shape)


def _broadcast_ok(a_shape, b_shape) -> bool:
    if b_shape == () or a_shape == b_shape:
        return True
    n = len(b_shape)
    return len(a_shape) > n and a_shape[-n:] == b_shape if n else True


def _binary_shapes(a: GraphValue, b: GraphValue, op: str):
    if _broadcast_ok(a.shape, b.shape):
        return
    if _broadcast_ok(b.shape, a.shape):
        return
    raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not "
                         "broadcast-compatible (scalar or trailing dims only)")


def add(a: GraphValue, b: GraphValue) -> GraphValue:
    _binary_shapes(a, b, "add")
    out = a.value + b.value

    def backward(g):
        return _reduce_broadcast(g, a.shape), _reduce_broadcast(g, b.shape)

    return _make(out, (a, b), backward, "add")


def mul(a: GraphValue, b: GraphValue) -> GraphValue:
    _binary_shapes(a, b, "mul")
    out = a.value * b.value

    def backward(g):
        return (_reduce_broadcast(g * b.value, a.shape),
                _reduce_broadcast(g * a.value, b.shape))

    return _make(out, (a, b), backward, "mul")


def scale(a: GraphValue, c: float) -> GraphValue:
    c = float(c)
    return _make(a.value * c, (a,), lambda g: (g * c,), "scale")


def neg(a: GraphValue) -> GraphValue:
    return scale(a, -1.0)


def sub(a: GraphValue, b: GraphValue) -> GraphValue:
    return add(a, neg(b))


def tanh(a: GraphValue) -> GraphValue:
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: GraphValue) -> GraphValue:
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def swish(a: GraphValue) -> GraphValue:
    sig = 1.0 / (1.0 + np.exp(-a.value))
    out = a.value * sig

    def backward(g):
        return (g * (sig + a.value * sig * (1.0 - sig)),)

    return _make(out, (a,), backward, "swish")


def matmul(a: GraphValue, b: GraphValue) -> GraphValue:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = a.value @ b.value

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _make(out, (a, b), backward, "matmul")


def transpose2d(a: GraphValue) -> GraphValue:
    if a.value.ndim != 2:
        raise DimensionError(f"transpose2d expects 2-D, got {a.shape}")
    return _make(a.value.T, (a,), lambda g: (g.T,), "transpose2d")


def reshape(a: GraphValue, shape) -> GraphValue:
    shape = tuple(shape)
    out = a.value.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def sum_all(a: GraphValue) -> GraphValue:
    out = a.value.sum()
    return _make(out, (a,), lambda g: (np.full(a.shape, float(g)),), "sum_all")


def softmax_lastdim(a: GraphValue) -> GraphValue:
    if a.value.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError("softmax_lastdim: empty last dimension")
    x = a.value
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), backward, "softmax_lastdim")


def masked_softmax_lastdim(a: GraphValue, mask: np.ndarray) -> GraphValue:
    """Softmax over the last dim restricted to positions where ``mask`` is 1.

    Masked positions get exactly zero weight and are excluded from the
    normalizer. A fully-masked row is an error.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise DimensionError(f"mask shape {mask.shape} != input shape {a.shape}")
    if np.any(mask.sum(axis=-1) == 0):
        raise DimensionError("masked_softmax_lastdim: fully-masked row")
    shifted = np.where(mask > 0, a.value, -np.inf)
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), backward, "masked_softmax_lastdim")


def layernorm(x: GraphValue, gain: GraphValue, bias: GraphValue) -> GraphValue:
    if x.value.ndim == 0 or x.shape[-1] < 2:
        raise DimensionError("layernorm: last dimension must be >= 2")
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layernorm: gain/bias must have shape ({d},)")
    mu = x.value.mean(axis=-1, keepdims=True)
    var = x.value.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
    xhat = (x.value - mu) * inv
    out = xhat * gain.value + bias.value

    def backward(g):
        gg = g * gain.value
        dx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        dgain = _reduce_broadcast(g * xhat, gain.shape)
        dbias = _reduce_broadcast(g, bias.shape)
        return dx, dgain, dbias

    return _make(out, (x, gain, bias), backward, "layernorm")


def depthwise_conv1d(x: GraphValue, kernel: GraphValue, padding: str) -> GraphValue:
    """Per-channel 1-D convolution over [T, d] with a [k, d] kernel.

    ``same-centered`` pads (k-1)/2 zeros on each side; ``causal-left`` pads
    k-1 zeros on the past side only, so output frame t depends on frames <= t.
    """
    if x.value.ndim != 2 or kernel.value.ndim != 2:
        raise DimensionError(f"depthwise_conv1d expects [T,d] and [k,d], got "
                             f"{x.shape} and {kernel.shape}")
    k, d = kernel.shape
    if k % 2 == 0:
        from .errors import ConfigError
        raise ConfigError(f"depthwise_conv1d: kernel width must be odd, got {k}")
    if x.shape[1] != d:
        raise DimensionError(f"channel mismatch: input {x.shape} vs kernel {kernel.shape}")
    if padding == "same-centered":
        off = (k - 1) // 2
    elif padding == "causal-left":
        off = k - 1
    else:
        from .errors import ConfigError
        raise ConfigError(f"unknown padding mode {padding!r}")
    T = x.shape[0]
    xpad = np.zeros((T + k - 1, d))
    xpad[off:off + T] = x.value
    out = np.zeros((T, d))
    for j in range(k):
        out += xpad[j:j + T] * kernel.value[j]

    def backward(g):
        dxpad = np.zeros_like(xpad)
        dk = np.zeros_like(kernel.value)
        for j in range(k):
            dxpad[j:j + T] += g * kernel.value[j]
            dk[j] = (g * xpad[j:j + T]).sum(axis=0)
        return dxpad[off:off + T], dk

    return _make(out, (x, kernel), backward, "depthwise_conv1d")


def strided_conv1d(x: GraphValue, kernel: GraphValue, stride: int) -> GraphValue:
    """Strided 1-D convolution: [T, f] with [k, f, o] kernel -> [ceil(T/s), o].

    Centered zero padding; output frame t reads input frames around t*stride.
    """
    if x.value.ndim != 2 or kernel.value.ndim != 3:
        raise DimensionError(f"strided_conv1d expects [T,f] and [k,f,o], got "
                             f"{x.shape} and {kernel.shape}")
    k, f, o = kernel.shape
    if x.shape[1] != f:
        raise DimensionError(f"feature mismatch: input {x.shape} vs kernel {kernel.shape}")
    T = x.shape[0]
    Tout = -(-T // stride)
    off = (k - 1) // 2
    pad_len = max(off + T, (Tout - 1) * stride + k)
    xpad = np.zeros((pad_len, f))
    xpad[off:off + T] = x.value
    idx = np.arange(Tout) * stride
    out = np.zeros((Tout, o))
    for j in range(k):
        out += xpad[idx + j] @ kernel.value[j]

    def backward(g):
        dxpad = np.zeros_like(xpad)
        dk = np.zeros_like(kernel.value)
        for j in range(k):
            np.add.at(dxpad, idx + j, g @ kernel.value[j].T)
            dk[j] = xpad[idx + j].T @ g
        return dxpad[off:off + T], dk

    return _make(out, (x, kernel), backward, "strided_conv1d")


def slice_lastdim(a: GraphValue, start: int, stop: int) -> GraphValue:
    out = a.value[..., start:stop]

    def backward(g):
        da = np.zeros(a.shape)
        da[..., start:stop] = g
        return (da,)

    return _make(out, (a,), backward, "slice_lastdim")


def slice_rows(a: GraphValue, start: int, stop: int) -> GraphValue:
    out = a.value[start:stop]

    def backward(g):
        da = np.zeros(a.shape)
        da[start:stop] = g
        return (da,)

    return _make(out, (a,), backward, "slice_rows")


def concat_lastdim(parts) -> GraphValue:
    parts = list(parts)
    widths = [p.shape[-1] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=-1)

    def backward(g):
        grads, pos = [], 0
        for w in widths:
            grads.append(g[..., pos:pos + w])
            pos += w
        return tuple(grads)

    return _make(out, tuple(parts), backward, "concat_lastdim")


def concat_rows(parts) -> GraphValue:
    parts = list(parts)
    heights = [p.shape[0] for p in parts]
    out = np.concatenate([p.value for p in parts], axis=0)

    def backward(g):
        grads, pos = [], 0
        for h in heights:
            grads.append(g[pos:pos + h])
            pos += h
        return tuple(grads)

    return _make(out, tuple(parts), backward, "concat_rows")


def gather_rows(table: GraphValue, ids) -> GraphValue:
    """Row lookup (embedding); backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.value[ids]

    def backward(g):
        dt = np.zeros(table.shape)
        np.add.at(dt, ids, g)
        return (dt,)

    return _make(out, (table,), backward, "gather_rows")


def gather_lastdim(a: GraphValue, idx: np.ndarray) -> GraphValue:
    """Per-row gather on the last dim of a 2-D value: out[i,j] = a[i, idx[i,j]]."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.shape[0])[:, None]
    out = a.value[rows, idx]

    def backward(g):
        da = np.zeros(a.shape)
        np.add.at(da, (np.broadcast_to(rows, idx.shape), idx), g)
        return (da,)

    return _make(out, (a,), backward, "gather_lastdim")


def outer_add(a: GraphValue, b: GraphValue) -> GraphValue:
    """Broadcast add over a grid: [T,d] + [U,d] -> [T,U,d].

    The backward rule sums the incoming gradient over the opposite grid axis,
    which is exactly the per-frame / per-position gradient aggregation of the
    joint network.
    """
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"outer_add expects [T,d] and [U,d], got "
                             f"{a.shape} and {b.shape}")
    out = a.value[:, None, :] + b.value[None, :, :]

    def backward(g):
        return g.sum(axis=1), g.sum(axis=0)

    return _make(out, (a, b), backward, "outer_add")


def scale_grad(a: GraphValue, factor: float) -> GraphValue:
    """Identity forward; multiplies the backward-flowing gradient by ``factor``."""
    factor = float(factor)
    return _make(a.value.copy(), (a,), lambda g: (g * factor,), "scale_grad")


def inverse_scale_grad(a: GraphValue, divisor: float) -> GraphValue:
    """Identity forward; divides the backward-flowing gradient by ``divisor``.

    Division (rather than multiplication by a precomputed reciprocal) keeps
    the rescaled gradient bit-identical to ``g / divisor``.
    """
    divisor = float(divisor)
    if divisor == 0.0:
        raise DimensionError("divisor must be nonzero")
    return _make(a.value.copy(), (a,), lambda g: (g / divisor,),
                 "inverse_scale_grad")


def stop_grad(a: GraphValue) -> GraphValue:
    """Detach: value is copied into a fresh leaf, no gradient flows back."""
    return GraphValue(a.value.copy())


def _toposort(root: GraphValue):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: GraphValue) -> None:
    """Reverse-mode sweep: fills grad slots with d(root)/d(value).

    Requires a scalar-shaped root; calling twice on the same root without a
    reset is an error (gradient accumulation is additive and explicit).
    """
    if root.value.size != 1:
        raise GraphError(f"backward root must be scalar-shaped, got {root.shape}")
    if root._backward_done:
        raise GraphError("backward already invoked on this root; reset grads first")
    root._backward_done = True
    order = _toposort(root)
    root._grad = root.grad + np.ones_like(root.value)
    for node in reversed(order):
        if node._backward_fn is None:
            continue
        grads = node._backward_fn(node.grad)
        if len(grads) != len(node.parents):
            raise GraphError(f"{node.op}: backward rule arity mismatch")
        for parent, g in zip(node.parents, grads):
            if g.shape != parent.shape:
                raise GraphError(f"{node.op}: gradient shape {g.shape} != "
                                 f"parent shape {parent.shape}")
            parent._grad = g if parent._grad is None else parent._grad + g


def zero_grads(values) -> None:
    for v in values:
        v.zero_grad()


def affine(x: GraphValue, weight: GraphValue, bias: GraphValue) -> GraphValue:
    """x @ W + b for 2-D x; flattens leading dims for higher ranks."""
    if x.value.ndim == 2:
        return add(matmul(x, weight), bias)
    lead = x.shape[:-1]
    flat = reshape(x, (int(np.prod(lead)), x.shape[-1]))
    out = add(matmul(flat, weight), bias)
    return reshape(out, lead + (weight.shape[1],))
