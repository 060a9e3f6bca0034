"""A small reverse-mode autodiff over numpy arrays.

Tensors record the op that produced them; :meth:`Tensor.backward` walks the
tape in reverse topological order and accumulates into every leaf that has
``requires_grad``. There is no broadcasting apart from bias addition inside
:func:`linear` and :func:`outer`.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgumentError


_DTYPE = np.float64


@contextmanager
def precision(dtype):
    """Run the block with tensors stored as ``dtype`` (float64 by default)."""
    global _DTYPE
    prev, _DTYPE = _DTYPE, np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=_DTYPE)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward
        self.grad = np.zeros_like(self.data) if (requires_grad and not _parents) else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1:
            raise InvalidArgumentError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            return
        order = _topological(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad += g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _result(data, parents, backward):
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


def _check_same(a, b, op):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_same(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), lambda g: (g * c,))


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return _result(out, (x,), lambda g: (g * (out > 0),))


def square(x):
    x = as_tensor(x)
    return _result(x.data * x.data, (x,), lambda g: (2.0 * x.data * g,))


# -- shape ---------------------------------------------------------------------


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise InvalidArgumentError("concat of an empty list")
    ax = axis % xs[0].data.ndim
    for x in xs[1:]:
        if x.data.ndim != xs[0].data.ndim or any(
            s != t for d, (s, t) in enumerate(zip(x.shape, xs[0].shape)) if d != ax
        ):
            raise InvalidArgumentError(f"concat: incompatible shapes {[t.shape for t in xs]}")
    sizes = [x.shape[ax] for x in xs]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([x.data for x in xs], axis=ax), xs, backward)


def _scatter_matrix(index, n, dtype):
    """Sparse (n, len(index)) 0/1 matrix summing gathered rows back to sources."""
    m = len(index)
    return sp.csr_matrix((np.ones(m, dtype=dtype), (index, np.arange(m))), shape=(n, m))


def gather(x, index):
    """Rows ``x[index]`` for an integer array ``index`` of any shape."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    flat = index.reshape(-1)

    def backward(g):
        g2 = g.reshape(len(flat), -1)
        out = _scatter_matrix(flat, n, g2.dtype) @ g2
        return (np.asarray(out).reshape(x.shape),)

    return _result(x.data[index], (x,), backward)


# -- linear algebra ------------------------------------------------------------


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` for ``x`` of shape (n, in) or (in,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise InvalidArgumentError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (weight.shape[0],):
            raise InvalidArgumentError(f"linear: bias shape {bias.shape} vs weight {weight.shape}")
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(x.data)
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result(out, parents, backward)


def outer(u, v):
    """``u[:, None] * v[None, :]``."""
    u, v = as_tensor(u), as_tensor(v)
    if u.data.ndim != 1 or v.data.ndim != 1:
        raise InvalidArgumentError("outer expects two vectors")
    return _result(np.outer(u.data, v.data), (u, v), lambda g: (g @ v.data, u.data @ g))


# -- reductions ----------------------------------------------------------------


def max_over_set(x):
    """Max over axis 1 of a (n, k, c) tensor; ties route gradient to the lowest index."""
    x = as_tensor(x)
    if x.data.ndim != 3:
        raise InvalidArgumentError(f"max_over_set expects (n, k, c), got {x.shape}")
    out = x.data.max(axis=1)

    def backward(g):
        arg = np.argmax(x.data, axis=1)
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx,)

    return _result(out, (x,), backward)


def sum_weighted(values, weights, segments, n_out):
    """``out[s] = sum_{p : segments[p] = s} weights[p] * values[p]``.

    ``weights`` may be a plain array (treated as constant) or a Tensor, in
    which case it receives a gradient too.
    """
    values, weights = as_tensor(values), as_tensor(weights)
    segments = np.asarray(segments, dtype=np.int64)
    p = values.shape[0]
    if weights.shape != (p,) or segments.shape != (p,):
        raise InvalidArgumentError("sum_weighted: weights/segments must be (P,) matching values")
    width = int(np.prod(values.shape[1:]))
    vals2 = values.data.reshape(p, width)
    mat = sp.csr_matrix((weights.data, (segments, np.arange(p))), shape=(n_out, p))
    out = np.asarray(mat @ vals2).reshape((n_out,) + values.shape[1:])

    def backward(g):
        g_rows = g.reshape(n_out, width)[segments]
        gv = (weights.data[:, None] * g_rows).reshape(values.shape) if values.requires_grad else None
        gw = np.einsum("ij,ij->i", g_rows, vals2) if weights.requires_grad else None
        return gv, gw

    return _result(out, (values, weights), backward)


def pair_relu_pool(a, b, ia, ib, weights, n_out):
    """``out[s] = sum_{p : ia[p] = s} weights[p] * relu(a[ia[p]] + b[ib[p]])``.

    Equivalent to gather/add/relu/sum_weighted but keeps only one (P, c)
    intermediate. ``ia`` doubles as the output segment of each pair.
    """
    a, b, weights = as_tensor(a), as_tensor(b), as_tensor(weights)
    ia = np.asarray(ia, dtype=np.int64)
    ib = np.asarray(ib, dtype=np.int64)
    p = len(ia)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise InvalidArgumentError(f"pair_relu_pool: incompatible shapes {a.shape} and {b.shape}")
    if a.shape[0] != n_out or ib.shape != (p,) or weights.shape != (p,):
        raise InvalidArgumentError("pair_relu_pool: index/weight shapes do not match")
    act = a.data[ia]
    act += b.data[ib]
    np.maximum(act, 0.0, out=act)
    mat = sp.csr_matrix((weights.data, (ia, np.arange(p))), shape=(n_out, p))
    out = np.asarray(mat @ act)

    def backward(g):
        g_rows = g[ia]
        gw = np.einsum("ij,ij->i", g_rows, act) if weights.requires_grad else None
        g_rows *= act > 0
        ga = np.asarray(mat @ g_rows) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            g_rows *= weights.data[:, None]
            gb = np.asarray(_scatter_matrix(ib, b.shape[0], g_rows.dtype) @ g_rows)
        return ga, gb, gw

    return _result(out, (a, b, weights), backward)


def total(x):
    x = as_tensor(x)
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, float(g)),))


def mse(pred, target):
    """Mean over samples (leading axis) of the squared error norm.

    For 0-d / 1-d inputs this is the usual mean of squared differences.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_same(pred, target, "mse")
    diff = pred.data - target.data
    n = diff.shape[0] if diff.ndim >= 2 else max(diff.size, 1)
    val = np.asarray((diff * diff).sum() / n)

    def backward(g):
        gd = (2.0 / n) * float(g) * diff
        return gd, -gd

    return _result(val, (pred, target), backward)


# -- geometry ------------------------------------------------------------------


def row_norm(x):
    """Euclidean norm of each row; the gradient at a zero row is taken as zero."""
    x = as_tensor(x)
    n = np.sqrt((x.data * x.data).sum(axis=1))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        unit = np.where((n > 0)[:, None], x.data / safe[:, None], 0.0)
        return (g[:, None] * unit,)

    return _result(n, (x,), backward)


def cosine_annealing(dist, r):
    """``0.5 * (cos(pi * d / r) + 1)`` for d <= r, zero beyond."""
    dist = as_tensor(dist)
    inside = dist.data <= r
    phase = math.pi * dist.data / r
    w = np.where(inside, 0.5 * (np.cos(phase) + 1.0), 0.0)

    def backward(g):
        return (g * np.where(inside, -0.5 * math.pi / r * np.sin(phase), 0.0),)

    return _result(w, (dist,), backward)


# -- parameters and optimization -----------------------------------------------


class ParameterSet:
    """Named trainable tensors, iterated in sorted-name order."""

    def __init__(self, params=None):
        self._params = OrderedDict()
        for name, t in sorted((params or {}).items()):
            self.add(name, t)

    def add(self, name, tensor):
        if name in self._params:
            raise InvalidArgumentError(f"duplicate parameter name {name!r}")
        if not isinstance(tensor, Tensor):
            tensor = Tensor(tensor, requires_grad=True, name=name)
        tensor.requires_grad = True
        tensor.name = name
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        self._params[name] = tensor
        self._params = OrderedDict(sorted(self._params.items()))
        return tensor

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def count(self):
        return int(sum(t.data.size for t in self))

    def state(self):
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state):
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=t.data.dtype)
            if arr.shape != t.shape:
                raise InvalidArgumentError(f"parameter {name!r}: shape {arr.shape} vs {t.shape}")
            t.data = arr.copy()
            t.grad = np.zeros_like(t.data)


    def astype(self, dtype):
        for t in self._params.values():
            t.data = t.data.astype(dtype)
            t.grad = np.zeros_like(t.data)


def he_uniform(rng, fan_out, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def zero_grad(params):
    for p in params:
        p.zero_grad()


def sgd_step(params, lr):
    """Plain SGD: ``p <- p - lr * grad``; gradients are left as they are."""
    for p in params:
        p.data -= lr * p.grad
