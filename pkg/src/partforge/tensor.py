"""Minimal dense-tensor engine with reverse-mode autodiff.

Everything is float64 and row-major. Shapes stay small (widths <= 128),
so plain numpy kernels are fast enough; there is no fusion and no
sparsity. A Tensor wraps an ndarray plus an optional backward closure;
calling .backward() on a scalar walks the recorded graph once in reverse
topological order.
"""

import numpy as np


class ShapeError(ValueError):
    pass


class DegenerateInputError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self):
        return Tensor(self.data)

    def item(self):
        return float(self.data)

    # -- graph walking ----------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    # -- operators --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        return mul(self, power(other, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    @property
    def T(self):
        return transpose(self, None)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad, (a, b))

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = bw
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad, (a, b))

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = bw
    return out


def power(a, p):
    a = _wrap(a)
    out = Tensor(a.data ** p, a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * p * a.data ** (p - 1))

    out._backward = bw
    return out


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dims disagree {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad, (a, b))

    def bw(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 else np.outer(a.data, g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out._backward = bw
    return out


def texp(a):
    a = _wrap(a)
    out = Tensor(np.exp(a.data), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * out.data)

    out._backward = bw
    return out


def tlog(a):
    a = _wrap(a)
    out = Tensor(np.log(a.data), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    out._backward = bw
    return out


def tanh(a):
    a = _wrap(a)
    out = Tensor(np.tanh(a.data), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out.data ** 2))

    out._backward = bw
    return out


def relu(a):
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    out._backward = bw
    return out


def softplus(a):
    """log(1 + exp(x)), overflow-safe; maps anything to a positive value."""
    a = _wrap(a)
    out = Tensor(np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data))),
                 a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g / (1.0 + np.exp(-a.data)))

    out._backward = bw
    return out


def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                gx = g if keepdims else np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(gx, a.data.shape).copy())

    out._backward = bw
    return out


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis, keepdims=False):
    """Max along an axis; gradient flows to the first argmax (deterministic)."""
    a = _wrap(a)
    out = Tensor(a.data.max(axis=axis, keepdims=keepdims), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            idx = a.data.argmax(axis=axis)
            mask = np.zeros_like(a.data)
            np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
            gx = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(mask * gx)

    out._backward = bw
    return out


def reshape(a, shape):
    a = _wrap(a)
    out = Tensor(a.data.reshape(shape), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    out._backward = bw
    return out


def transpose(a, axes=None):
    a = _wrap(a)
    out = Tensor(np.transpose(a.data, axes), a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            inv = None if axes is None else np.argsort(axes)
            a._accumulate(np.transpose(g, inv))

    out._backward = bw
    return out


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 any(t.requires_grad for t in tensors), tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, gpart in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(gpart)

    out._backward = bw
    return out


def take(a, idx):
    a = _wrap(a)
    out = Tensor(a.data[idx], a.requires_grad, (a,))

    def bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    out._backward = bw
    return out


# -- composite ops used everywhere ----------------------------------------

def softmax_stable(logits):
    """Row-wise softmax with max subtraction; rows sum to 1 within 1e-12."""
    logits = _wrap(logits)
    shift = Tensor(logits.data.max(axis=-1, keepdims=True))  # constant shift
    e = texp(logits - shift)
    return e / tsum(e, axis=-1, keepdims=True)


def l2_normalize(v, eps=0.0):
    """Normalize rows to unit Euclidean norm. Zero rows are an error."""
    v = _wrap(v)
    sq = tsum(mul(v, v), axis=-1, keepdims=True)
    if np.any(sq.data <= 0.0):
        raise DegenerateInputError("l2_normalize: zero-norm row")
    return v * power(sq, -0.5)


def layer_norm(x, gain, bias, eps=1e-6):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = tmean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    return mul(xc, power(add(var, eps), -0.5)) * gain + bias


def grad_check(f, params, h=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f takes the Tensor `params` (or a dict of named Tensors) and returns a
    scalar Tensor. The analytic gradient comes from one backward pass; each
    coordinate is then probed with a symmetric perturbation of size h. For a
    dict, returns the worst error over all entries.
    """
    if isinstance(params, dict):
        worst = 0.0
        for name in params:
            def f_one(p, _n=name):
                return f({k: (p if k == _n else v) for k, v in params.items()})
            worst = max(worst, grad_check(f_one, params[name], h))
        return worst
    params.zero_grad()
    out = f(params)
    if not np.all(np.isfinite(out.data)):
        raise NumericalError("grad_check: non-finite output")
    out.backward()
    analytic = (params.grad.copy() if params.grad is not None
                else np.zeros_like(params.data))  # param unused by f
    flat = params.data.reshape(-1)
    num = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = float(f(params.detach()).data)
        flat[i] = orig - h
        lo = float(f(params.detach()).data)
        flat[i] = orig
        num[i] = (hi - lo) / (2.0 * h)
    num = num.reshape(params.data.shape)
    if not np.all(np.isfinite(num)):
        raise NumericalError("grad_check: non-finite finite-difference estimate")
    rel = np.abs(analytic - num) / np.maximum(1.0, np.abs(analytic))
    return float(rel.max())
