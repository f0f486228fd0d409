"""A small reverse-mode autodiff engine over numpy arrays.

Only the operations needed by the relational models are provided: elementwise
arithmetic with broadcasting, matrix products, the usual activations, softmax and
cross-entropy, 3x3 convolution, batch normalization, dropout, a GRU cell and the
straight-through substitution used by hard attention.  ``Adam`` and ``grad_check``
round it off.

Tensors keep whatever float dtype they were created with.  Parameters default to
float32; reductions accumulate in float64 and cast back.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
import threading

import numpy as np

from .errors import ConfigurationError, ContractError, NumericInputError, ShapeError

_grad_state = threading.local()


def is_grad_enabled():
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording on the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=np.float32):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, dtype=None)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def __len__(self):
        return self.data.shape[0]

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into every reachable tensor that requires grad."""
        if grad is None:
            if self.data.size != 1:
                raise ContractError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, finished = stack.pop()
            if finished:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        pending = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    def zero_grad(self):
        self.grad = None

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _result(data, parents, backward):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    requires = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = requires
    out._parents = parents if requires else ()
    out._backward = backward if requires else None
    return out


def as_tensor(value, like=None):
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float32
    return Tensor(value, dtype=dtype)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _result(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)

    return _result(out, (a, b), backward)


def neg(a):
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a):
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a):
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    x = a.data
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


# ---------------------------------------------------------------------------
# reductions and shape manipulation

def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _result(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape):
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    inverse = None if axes is None else np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def _is_basic_index(index):
    if not isinstance(index, tuple):
        index = (index,)
    return all(isinstance(i, (int, slice, type(Ellipsis))) or i is None for i in index)


def getitem(a, index):
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def backward(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = _pair(a, b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            bd = b.data if b.ndim == 1 else np.swapaxes(b.data, -1, -2)
            ga = _unbroadcast(g @ bd if b.ndim > 1 else np.multiply.outer(g, b.data), a.shape)
        if b.requires_grad:
            if a.ndim >= 2 and b.ndim == 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ weight + bias`` with x of shape (..., in) and weight (in, out)."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight {weight.shape}")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0, dtype=np.float64).astype(g.dtype)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward)


# ---------------------------------------------------------------------------
# softmax family

def _check_finite(x, name):
    if not np.all(np.isfinite(x)):
        raise NumericInputError(f"{name}: input contains non-finite values")


def _softmax_array(x, axis=-1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted.astype(np.float64))
    return (e / e.sum(axis=axis, keepdims=True)).astype(x.dtype)


def softmax(logits, axis=-1):
    logits = as_tensor(logits)
    if logits.size == 0:
        raise ShapeError("softmax of an empty vector")
    _check_finite(logits.data, "softmax")
    out = _softmax_array(logits.data, axis)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True, dtype=np.float64).astype(out.dtype)
        return (out * (g - inner),)

    return _result(out, (logits,), backward)


def log_softmax(logits, axis=-1):
    logits = as_tensor(logits)
    _check_finite(logits.data, "log_softmax")
    x = logits.data.astype(np.float64)
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = (shifted - lse).astype(logits.dtype)
    probs = np.exp(shifted - lse).astype(logits.dtype)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _result(out, (logits,), backward)


def cross_entropy(logits, target):
    """Mean of ``-log softmax(logits)[target]`` over the batch.

    ``logits`` is (C,) with an integer target or (B, C) with B targets.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    z = logits.data.reshape(1, -1) if single else logits.data
    targets = np.atleast_1d(np.asarray(target)).astype(np.int64)
    n_classes = z.shape[1]
    if targets.shape[0] != z.shape[0]:
        raise ShapeError(f"cross_entropy: {z.shape[0]} rows but {targets.shape[0]} targets")
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise IndexError(f"cross_entropy: target out of range [0, {n_classes})")
    _check_finite(z, "cross_entropy")

    x = z.astype(np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z.shape[0])
    loss = np.mean(lse - shifted[rows, targets])
    probs = np.exp(shifted - lse[:, None])

    def backward(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        d *= float(g) / z.shape[0]
        return (d.astype(logits.dtype).reshape(logits.shape),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# convolution and normalization

def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x, kernels, bias=None, stride=1, padding=0):
    """Cross-correlation of (N, C, H, W) or (C, H, W) input with (O, C, k, k) kernels."""
    single = x.ndim == 3
    if single:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 4 or kernels.ndim != 4:
        raise ShapeError(f"conv2d: expected NCHW input and OCkk kernels, got {x.shape}, {kernels.shape}")
    n, c, h, w = x.shape
    o, kc, kh, kw = kernels.shape
    if kc != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {kc}")
    if stride < 1 or padding < 0:
        raise ShapeError("conv2d: stride must be positive and padding non-negative")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: {h}x{w} input too small for kernel {kh}x{kw}")

    # channels-last internally; column order is (ki, kj, c)
    xp = x.data.transpose(0, 2, 3, 1)
    if padding:
        xp = np.pad(xp, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    cols = np.concatenate([xp[:, i : i + span_h : stride, j : j + span_w : stride, :]
                           for i in range(kh) for j in range(kw)], axis=-1)
    cols = cols.reshape(n * ho * wo, kh * kw * c)
    wmat = kernels.data.transpose(2, 3, 1, 0).reshape(kh * kw * c, o)
    out = cols @ wmat
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gk = None
        if kernels.requires_grad:
            gk = (cols.T @ gm).reshape(kh, kw, c, o).transpose(3, 2, 0, 1)
        gx = None
        if x.requires_grad:
            dcols = (gm @ wmat.T).reshape(n, ho, wo, kh, kw, c)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i : i + span_h : stride, j : j + span_w : stride, :] += dcols[:, :, :, i, j, :]
            gx = dxp[:, padding : padding + h, padding : padding + w, :].transpose(0, 3, 1, 2)
        if bias is None:
            return gx, gk
        return gx, gk, gm.sum(axis=0, dtype=np.float64).astype(g.dtype)

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    result = _result(out, parents, backward)
    return reshape(result, result.shape[1:]) if single else result


def batch_norm(x, gamma, beta, running_mean, running_var, training=True,
               momentum=0.1, eps=1e-5):
    """Per-channel normalization of (N, C) or (N, C, H, W) input.

    In training mode the batch statistics are used and ``running_mean`` /
    ``running_var`` (numpy arrays) are updated in place by exponential moving
    average, with the unbiased variance for the running estimate.
    """
    if x.ndim not in (2, 4):
        raise ShapeError(f"batch_norm: expected (N, C) or (N, C, H, W), got {x.shape}")
    n, c = x.shape[:2]
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    m = x.data.size // c

    def channel_sum(a):
        return a.reshape(n, c, -1).sum(axis=2, dtype=np.float64).sum(axis=0)

    xd = x.data
    if training:
        if n < 2:
            raise ConfigurationError("batch_norm: training mode needs a batch of at least 2")
        mu = channel_sum(xd) / m
        centered = xd - mu.astype(xd.dtype).reshape(bshape)
        var = channel_sum(centered * centered) / m
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * (var * m / max(m - 1, 1)).astype(running_var.dtype)
    else:
        mu = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
        centered = xd - mu.astype(xd.dtype).reshape(bshape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(xd.dtype).reshape(bshape)
    xhat = centered * inv_std
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        gg = channel_sum(g * xhat).astype(g.dtype)
        gb = channel_sum(g).astype(g.dtype)
        gx = None
        if x.requires_grad:
            scale = gamma.data.reshape(bshape) * inv_std
            if training:
                mean_g = (gb / m).reshape(bshape)
                mean_gx = (gg / m).reshape(bshape)
                gx = scale * (g - mean_g - xhat * mean_gx)
            else:
                gx = g * scale
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward)


def dropout(x, rate, rng, training=True):
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------------------
# recurrent cell and straight-through selection

def gru_cell(x, h, w_gates, b_gates, w_cand, b_cand):
    """One GRU update.

    ``w_gates`` is (d_in + d_h, 2 d_h) holding the reset then update gate
    weights; ``w_cand`` is (d_in + d_h, d_h).  Works on single vectors or
    batches (leading dimensions).
    """
    d_in, d_h = x.shape[-1], h.shape[-1]
    if w_gates.shape != (d_in + d_h, 2 * d_h) or b_gates.shape != (2 * d_h,):
        raise ShapeError(f"gru_cell: gate parameters {w_gates.shape}/{b_gates.shape} "
                         f"do not fit d_in={d_in}, d_h={d_h}")
    if w_cand.shape != (d_in + d_h, d_h) or b_cand.shape != (d_h,):
        raise ShapeError(f"gru_cell: candidate parameters {w_cand.shape}/{b_cand.shape} "
                         f"do not fit d_in={d_in}, d_h={d_h}")
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"gru_cell: batch shapes differ, {x.shape} vs {h.shape}")
    gates = sigmoid(linear(concat([x, h], -1), w_gates, b_gates))
    reset = gates[..., :d_h]
    update = gates[..., d_h:]
    candidate = tanh(linear(concat([x, reset * h], -1), w_cand, b_cand))
    return (1.0 - update) * h + update * candidate


def straight_through(hard, soft, reference=None):
    """Forward ``hard`` exactly, backpropagate into ``soft`` as if it were the output.

    With ``reference`` given, the forward value becomes ``hard + (soft - reference)``:
    equal to ``hard`` when ``soft`` is at the reference point, but varying to first
    order like ``soft``.  Finite differences of that form reproduce the
    straight-through gradient, which is how it is checked.
    """
    out = np.asarray(hard, dtype=soft.dtype)
    if reference is not None:
        out = out + (soft.data - reference)
    else:
        out = out.copy()
    return _result(out, (soft,), lambda g: (g,))


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update to ``params`` (numpy arrays) in place."""
    if len(params) != len(grads):
        raise ShapeError(f"adam_step: {len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"adam_step: shape mismatch {p.shape}, {g.shape}, {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype)
    return params, state


class Adam:
    """Adam over a fixed list of parameter tensors, reading their ``.grad``."""

    def __init__(self, parameters, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=None):
        self.parameters = list(parameters)
        self.state = AdamState(learning_rate=lr, beta1=beta1, beta2=beta2, epsilon=eps)
        self.clip_norm = clip_norm

    def zero_grad(self):
        for p in self.parameters:
            p.grad = None

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.parameters]
        if self.clip_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
                grads = [g * scale for g in grads]
        adam_step([p.data for p in self.parameters], grads, self.state)


# ---------------------------------------------------------------------------
# finite-difference check

def grad_check(function, inputs, eps=1e-3):
    """Largest relative error between tape gradients and central differences.

    ``function(*inputs)`` must return a scalar tensor.  Inputs are promoted to
    float64 for the duration of the check and restored afterwards.  The error
    per entry is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    inputs = list(inputs)
    saved = [(t.data, t.requires_grad, t.grad) for t in inputs]
    try:
        for t in inputs:
            t.data = t.data.astype(np.float64)
            t.requires_grad = True
            t.grad = None
        out = function(*inputs)
        if out.data.size != 1:
            raise ContractError(f"grad_check: function returned shape {out.shape}, expected a scalar")
        out.backward()
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.astype(np.float64)
                    for t in inputs]

        worst = 0.0
        with no_grad():
            for t, a in zip(inputs, analytic):
                flat = t.data.reshape(-1)
                a = a.reshape(-1)
                for i in range(flat.size):
                    original = flat[i]
                    flat[i] = original + eps
                    plus = float(np.sum(function(*inputs).data, dtype=np.float64))
                    flat[i] = original - eps
                    minus = float(np.sum(function(*inputs).data, dtype=np.float64))
                    flat[i] = original
                    numeric = (plus - minus) / (2.0 * eps)
                    err = abs(a[i] - numeric) / max(1e-8, abs(a[i]) + abs(numeric))
                    worst = max(worst, err)
        return worst
    finally:
        for t, (data, req, grad) in zip(inputs, saved):
            t.data = data
            t.requires_grad = req
            t.grad = grad
