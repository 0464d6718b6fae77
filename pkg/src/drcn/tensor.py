"""Dense tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` records a node carrying
its parents and a backward closure.  ``Tensor.backward`` replays the recorded
nodes reachable from the output in exact reverse recording order, so gradient
accumulation order (and therefore every bit of every gradient) is fixed.
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np


class DimensionError(ValueError):
    pass


class DegenerateMaskError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class EvaluationError(ArithmeticError):
    pass


_state = threading.local()
_seq = itertools.count()

COSINE_EPS = 1e-8


def _flag(name, default):
    return getattr(_state, name, default)


def default_dtype():
    return _flag("dtype", np.float64)


@contextmanager
def dtype_scope(dtype):
    """Create new tensors in ``dtype`` (float64 or float32) inside the block."""
    prev = default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


def grad_enabled():
    return _flag("grad", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


class Tape:
    """Records every differentiable node created while active.

    Used as a context manager; nested tapes each see the nodes.  Entries are
    ``(op_name, output)`` pairs in creation order.
    """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        stack = _flag("tapes", None)
        if stack is None:
            stack = _state.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)


class Tensor:
    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype or default_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = None
        self._id = next(_seq)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every reachable leaf."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("implicit gradient requires a scalar output")
            grad = np.ones_like(self.data)
        nodes = {}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._id in nodes or t._backward is None:
                continue
            nodes[t._id] = t
            stack.extend(p for p in t._parents if p.requires_grad)
        order = sorted(nodes.values(), key=lambda t: t._id, reverse=True)

        pending = {self._id: np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = pending.pop(node._id, None)
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._backward is None:
                    parent.grad += pg
                elif parent._id in pending:
                    pending[parent._id] = pending[parent._id] + pg
                else:
                    pending[parent._id] = pg
        # a leaf output (no recorded op) receives its seed directly
        if self._backward is None:
            self.grad += grad

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
        return mul(self, 1.0 / _data(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=default_dtype())


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, dtype=data.dtype)
    if needs:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
        for tape in _flag("tapes", None) or ():
            tape.nodes.append((op, out))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ----------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)), "mul")


def abs_(x):
    x = as_tensor(x)
    return _make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0).astype(x.dtype), (x,),
                 lambda g: (g * on,), "relu")


# ------------------------------------------------------------ linear algebra

def matmul(a, b):
    """Matrix product; leading batch dims broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ---------------------------------------------------------------- structure

def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
                n != m for i, (n, m) in enumerate(zip(t.shape, ref)) if i != ax):
            raise DimensionError(f"concat shapes {ref} and {t.shape} differ off axis {axis}")
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(np.concatenate([t.data for t in tensors], axis=ax),
                 tensors, backward, "concat")


def take(x, index):
    x = as_tensor(x)
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(p is None or p is Ellipsis or isinstance(p, (int, np.integer, slice))
                for p in parts)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(np.array(x.data[index]), (x,), backward, "take")


def reshape(x, shape):
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def swapaxes(x, a1, a2):
    x = as_tensor(x)
    return _make(np.swapaxes(x.data, a1, a2), (x,),
                 lambda g: (np.swapaxes(g, a1, a2),), "swapaxes")


# ---------------------------------------------------------------- reductions

def sum_(x, axis=None):
    x = as_tensor(x)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis), 1.0 / n)


# ----------------------------------------------------------- masked/attention

def _check_mask_rows(mask, what):
    if np.any(mask.sum(axis=-1) == 0):
        raise DegenerateMaskError(f"{what}: a row has no unmasked entries")


def softmax_masked(scores, mask):
    """Softmax over the last axis restricted to positions where mask is 1.

    ``mask`` must broadcast against ``scores``.  Masked entries are exactly 0.
    """
    scores = as_tensor(scores)
    keep = np.broadcast_to(np.asarray(mask) > 0, scores.shape)
    _check_mask_rows(keep, "softmax_masked")
    s = np.where(keep, scores.data, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.where(keep, np.exp(s), 0.0)
    y = (e / e.sum(axis=-1, keepdims=True)).astype(scores.dtype)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (scores,), backward, "softmax_masked")


def cosine_matrix(a, b, eps=COSINE_EPS):
    """Pairwise cosine ``a_i . b_j / (|a_i||b_j| + eps)`` over the last axis.

    ``a`` is (..., I, d), ``b`` is (..., J, d); result is (..., I, J).  A zero
    row gets score 0 and contributes no norm gradient.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise DimensionError(f"cosine widths differ: {a.shape} vs {b.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=-1))
    nb = np.sqrt((b.data * b.data).sum(axis=-1))
    dot = a.data @ np.swapaxes(b.data, -1, -2)
    den = na[..., :, None] * nb[..., None, :] + eps
    e = dot / den

    def backward(g):
        gd = g / den
        ga = gd @ b.data
        gb = np.swapaxes(gd, -1, -2) @ a.data
        gden = -g * dot / (den * den)
        gna = (gden * nb[..., None, :]).sum(axis=-1)
        gnb = (gden * na[..., :, None]).sum(axis=-2)
        with np.errstate(invalid="ignore", divide="ignore"):
            ua = np.where(na[..., None] > 0, a.data / na[..., None], 0.0)
            ub = np.where(nb[..., None] > 0, b.data / nb[..., None], 0.0)
        return ga + gna[..., None] * ua, gb + gnb[..., None] * ub

    return _make(e, (a, b), backward, "cosine")


def cosine(u, v, eps=COSINE_EPS):
    u, v = as_tensor(u), as_tensor(v)
    return reshape(cosine_matrix(reshape(u, (1, -1)), reshape(v, (1, -1)), eps), ())


class PoolRecord:
    """Winning time index per output dimension of a max-over-time pool."""

    def __init__(self, argmax_index):
        self.argmax_index = argmax_index

    def rates(self, length=None):
        """Fraction of dimensions whose max landed on each time step."""
        idx = self.argmax_index
        length = length or int(idx.max()) + 1
        counts = np.apply_along_axis(np.bincount, -1, idx, minlength=length)
        return counts / idx.shape[-1]


def max_pool_time(x, mask):
    """Per-dimension max over the time axis (-2) of unmasked steps.

    Ties go to the lowest time index.  Returns ``(pooled, PoolRecord)``.
    """
    x = as_tensor(x)
    mask = np.asarray(mask)
    if mask.shape != x.shape[:-1]:
        raise DimensionError(f"mask {mask.shape} does not match steps of {x.shape}")
    _check_mask_rows(mask, "max_pool_time")
    masked = np.where(mask[..., None] > 0, x.data, -np.inf)
    idx = masked.argmax(axis=-2)
    out = np.take_along_axis(x.data, idx[..., None, :], axis=-2)[..., 0, :]

    def backward(gout):
        g = np.zeros_like(x.data)
        np.put_along_axis(g, idx[..., None, :], gout[..., None, :], axis=-2)
        return (g,)

    return _make(out, (x,), backward, "max_pool_time"), PoolRecord(idx)


# ------------------------------------------------------------ nn primitives

def dropout(x, keep, rng, training):
    """Inverted dropout: scale kept units by 1/keep in training, identity otherwise."""
    if not training or keep >= 1.0:
        return x
    x = as_tensor(x)
    m = ((rng.random(x.shape) < keep) / keep).astype(x.dtype)
    return mul(x, m)


def embedding(table, ids, pad_id=0):
    """Row lookup.  Rows for ``pad_id`` come out as zeros and get no gradient."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range [0, {table.shape[0]})")
    live = (ids != pad_id)[..., None]
    out = table.data[ids] * live

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g * live)
        return (full,)

    return _make(out.astype(table.dtype), (table,), backward, "embedding")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Batch norm over axis 0 of a (B, d) input.

    Training uses batch statistics and updates the running arrays in place;
    eval uses the running arrays.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        xhat = (x.data - running_mean) / np.sqrt(running_var + eps)

        def backward_eval(g):
            return g * scale, (g * xhat).sum(axis=0), g.sum(axis=0)

        return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward_eval,
                     "batch_norm")
    n = x.shape[0]
    mu = x.data.mean(axis=0)
    var = x.data.var(axis=0)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu
    running_var *= 1.0 - momentum
    running_var += momentum * var * (n / max(n - 1, 1))

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=0) - xhat * (gx_hat * xhat).mean(axis=0))
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), backward, "batch_norm")


def log_softmax_np(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_np(z):
    return np.exp(log_softmax_np(z))


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax_np(logits.data)
    loss = -logp[np.arange(n), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (g * d / n,)

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "cross_entropy")


def lstm(x, mask, w_input, w_hidden, bias, reverse=False):
    """Single-direction LSTM over (B, T, d) with a (B, T) step mask.

    Gates are packed [input, forget, output, candidate] along the last axis
    of the (d, 4h) / (h, 4h) / (4h,) weights; no peepholes.  On masked steps
    the state carries through unchanged and the output is zero, so padding at
    either end of a sequence never leaks into the recurrence.
    """
    x, w_input, w_hidden, bias = map(as_tensor, (x, w_input, w_hidden, bias))
    mask = np.asarray(mask, dtype=x.dtype)
    B, T, _ = x.shape
    H = w_hidden.shape[0]
    if w_input.shape != (x.shape[-1], 4 * H) or w_hidden.shape != (H, 4 * H):
        raise DimensionError("lstm weight shapes do not match input/hidden sizes")
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xw = x.data @ w_input.data + bias.data
    U = w_hidden.data
    h = np.zeros((B, H), dtype=x.dtype)
    c = np.zeros((B, H), dtype=x.dtype)
    out = np.zeros((B, T, H), dtype=x.dtype)
    cache = {}
    for t in steps:
        z = xw[:, t] + h @ U
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        o = _sigmoid(z[:, 2 * H:3 * H])
        g = np.tanh(z[:, 3 * H:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t, None]
        cache[t] = (i, f, o, g, c, h, tc, m)
        out[:, t] = m * h_new
        c = m * c_new + (1.0 - m) * c
        h = m * h_new + (1.0 - m) * h

    def backward(gout):
        dz = np.zeros_like(xw)
        dU = np.zeros_like(U)
        dh = np.zeros((B, H), dtype=x.dtype)
        dc = np.zeros((B, H), dtype=x.dtype)
        for t in reversed(steps):
            i, f, o, g, c_prev, h_prev, tc, m = cache[t]
            dh_new = m * (gout[:, t] + dh)
            dc_new = m * dc + dh_new * o * (1.0 - tc * tc)
            dzt = np.concatenate([
                dc_new * g * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dh_new * tc * o * (1.0 - o),
                dc_new * i * (1.0 - g * g),
            ], axis=1)
            dz[:, t] = dzt
            dU += h_prev.T @ dzt
            dh = dzt @ U.T + (1.0 - m) * dh
            dc = dc_new * f + (1.0 - m) * dc
        flat = dz.reshape(-1, 4 * H)
        dx = dz @ w_input.data.T
        dW = x.data.reshape(-1, x.shape[-1]).T @ flat
        return dx, dW, dU, flat.sum(axis=0)

    return _make(out, (x, w_input, w_hidden, bias), backward, "lstm")


# ------------------------------------------------------------ verification

class GradCheckResult:
    def __init__(self, max_rel_error, worst_param, worst_index, analytic, numeric):
        self.max_rel_error = max_rel_error
        self.worst_param = worst_param
        self.worst_index = worst_index
        self.analytic = analytic
        self.numeric = numeric

    def __float__(self):
        return float(self.max_rel_error)

    def __repr__(self):
        return (f"GradCheckResult(max_rel_error={self.max_rel_error:.3e}, "
                f"worst={self.worst_param}{list(self.worst_index)})")


def grad_check_detail(f, params, h=1e-5, names=None):
    """Compare tape gradients of scalar ``f()`` with central differences.

    Step per coordinate is ``h * max(1, |theta|)``; relative error uses the
    denominator ``max(|analytic|, |numeric|, 1e-8)``.
    """
    names = names or [p.name or f"param{k}" for k, p in enumerate(params)]
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.data).all():
        raise EvaluationError("objective is not finite at the check point")
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    def value():
        with no_grad():
            v = float(f().data)
        if not np.isfinite(v):
            raise EvaluationError("objective is not finite under perturbation")
        return v

    worst = GradCheckResult(0.0, None, (), 0.0, 0.0)
    for name, p, ga in zip(names, params, analytic):
        flat = p.data.reshape(-1)
        gflat = ga.reshape(-1)
        for k in range(flat.size):
            old = flat[k]
            step = h * max(1.0, abs(old))
            flat[k] = old + step
            fp = value()
            flat[k] = old - step
            fm = value()
            flat[k] = old
            num = (fp - fm) / (2.0 * step)
            ana = gflat[k]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if rel > worst.max_rel_error or worst.worst_param is None:
                worst = GradCheckResult(rel, name, np.unravel_index(k, p.shape), ana, num)
    return worst


def grad_check(f, params, h=1e-5):
    """Max relative error between tape and finite-difference gradients."""
    return grad_check_detail(f, params, h).max_rel_error
