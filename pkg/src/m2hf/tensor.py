"""Dense float64 tensors with reverse-mode automatic differentiation.

Every kernel used by the fusion levels lives here: matmul, softmax,
layer norm, L2 normalization, signed sqrt, sum pooling, concatenation,
and the usual element-wise operations.  Tensors are immutable after
construction; an operation builds a new node that remembers how to push
gradients back to its parents.  Call ``backward()`` on a scalar node to
populate ``.grad`` on every reachable tensor with ``requires_grad``.

All storage is C-contiguous 64-bit float.  Any kernel that produces a
NaN or Inf raises ``NonFiniteError`` immediately rather than letting it
propagate.
"""

from __future__ import annotations

import numpy as np


class TensorError(Exception):
    pass


class ShapeMismatchError(TensorError):
    pass


class NonFiniteError(TensorError):
    pass


class Tensor:
    """A numeric array node in the computation graph.

    ``array`` is the value (C-contiguous float64), ``grad`` is filled by
    ``backward()``.  Do not mutate ``array`` after construction.
    """

    __slots__ = ("array", "requires_grad", "grad", "_parents", "_vjp", "op")

    def __init__(self, array, requires_grad=False, _parents=(), _vjp=None, op="leaf"):
        arr = np.ascontiguousarray(array, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value produced by op '{op}'")
        self.array = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None
        self.op = op

    @property
    def shape(self):
        return self.array.shape

    @property
    def size(self):
        return self.array.size

    def item(self):
        return float(self.array.reshape(()))

    def detach(self):
        """Value-only copy; gradients do not flow past this node."""
        return Tensor(self.array, op="detach")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"

    # -- graph traversal -------------------------------------------------

    def backward(self):
        if self.array.size != 1:
            raise ShapeMismatchError("backward() requires a scalar output")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        grads = {id(self): np.ones_like(self.array)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is not None:
                for parent, pg in zip(node._parents, node._vjp(g)):
                    if not parent.requires_grad:
                        continue
                    if pg is None:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
            if not node._parents:
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient at op '{node.op}'")
                node.grad = g if node.grad is None else node.grad + g

    def zero_grad(self):
        self.grad = None

    # -- operator sugar ---------------------------------------------------

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


# -- element-wise ---------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.array + b.array
    return Tensor(out, _parents=(a, b), op="add",
                  _vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.array - b.array
    return Tensor(out, _parents=(a, b), op="sub",
                  _vjp=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.array * b.array
    return Tensor(out, _parents=(a, b), op="mul",
                  _vjp=lambda g: (_unbroadcast(g * b.array, a.shape),
                                  _unbroadcast(g * a.array, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.array / b.array
    return Tensor(out, _parents=(a, b), op="div",
                  _vjp=lambda g: (_unbroadcast(g / b.array, a.shape),
                                  _unbroadcast(-g * a.array / b.array**2, b.shape)))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.array)
    return Tensor(out, _parents=(a,), op="exp", _vjp=lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    out = np.log(a.array)
    return Tensor(out, _parents=(a,), op="log", _vjp=lambda g: (g / a.array,))


def sigmoid(a):
    a = as_tensor(a)
    out = np.where(a.array >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.array))),
                   np.exp(-np.abs(a.array)) / (1.0 + np.exp(-np.abs(a.array))))
    return Tensor(out, _parents=(a,), op="sigmoid",
                  _vjp=lambda g: (g * out * (1.0 - out),))


def relu(a):
    a = as_tensor(a)
    mask = a.array > 0
    return Tensor(a.array * mask, _parents=(a,), op="relu",
                  _vjp=lambda g: (g * mask,))


def sign(a):
    """Element-wise sign; gradient is zero everywhere."""
    a = as_tensor(a)
    return Tensor(np.sign(a.array), _parents=(a,), op="sign",
                  _vjp=lambda g: (np.zeros_like(a.array),))


def signed_sqrt(a, eps=1e-12):
    """sign(x) * sqrt(|x|); derivative clamped near zero by eps."""
    a = as_tensor(a)
    root = np.sqrt(np.abs(a.array))
    out = np.sign(a.array) * root
    return Tensor(out, _parents=(a,), op="signed_sqrt",
                  _vjp=lambda g: (g * 0.5 / np.maximum(root, eps),))


# -- reductions -----------------------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.array.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return Tensor(out, _parents=(a,), op="sum", _vjp=vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a, axis):
    """Max along `axis`; ties route the gradient to the first maximum."""
    a = as_tensor(a)
    out = a.array.max(axis=axis)
    idx = a.array.argmax(axis=axis)

    def vjp(g):
        grad = np.zeros_like(a.array)
        np.put_along_axis(grad, np.expand_dims(idx, axis),
                          np.expand_dims(g, axis), axis)
        return (grad,)

    return Tensor(out, _parents=(a,), op="max", _vjp=vjp)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.array.ndim != 2 or b.array.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out = a.array @ b.array
    return Tensor(out, _parents=(a, b), op="matmul",
                  _vjp=lambda g: (g @ b.array.T, a.array.T @ g))


def transpose(a):
    a = as_tensor(a)
    return Tensor(a.array.T, _parents=(a,), op="transpose",
                  _vjp=lambda g: (g.T,))


def diag(a):
    """Diagonal of a square matrix as a vector."""
    a = as_tensor(a)
    n, m = a.shape
    if n != m:
        raise ShapeMismatchError(f"diag: matrix is {a.shape}, not square")
    out = np.diagonal(a.array).copy()

    def vjp(g):
        grad = np.zeros_like(a.array)
        np.fill_diagonal(grad, g)
        return (grad,)

    return Tensor(out, _parents=(a,), op="diag", _vjp=vjp)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.array for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor(out, _parents=tuple(tensors), op="concat", _vjp=vjp)


def slice_cols(a, start, stop):
    a = as_tensor(a)
    out = a.array[:, start:stop].copy()

    def vjp(g):
        grad = np.zeros_like(a.array)
        grad[:, start:stop] = g
        return (grad,)

    return Tensor(out, _parents=(a,), op="slice_cols", _vjp=vjp)


def stack_scalars(cells, shape):
    """Assemble scalar tensors into one array of the given shape."""
    cells = [as_tensor(c) for c in cells]
    if int(np.prod(shape)) != len(cells):
        raise ShapeMismatchError(f"stack_scalars: {len(cells)} cells cannot fill {shape}")
    out = np.array([c.array.reshape(()) for c in cells]).reshape(shape)

    def vjp(g):
        flat = g.reshape(-1)
        return tuple(np.full(c.shape, flat[i]) for i, c in enumerate(cells))

    return Tensor(out, _parents=tuple(cells), op="stack_scalars", _vjp=vjp)


def take_rows(a, indices):
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = a.array[idx]

    def vjp(g):
        grad = np.zeros_like(a.array)
        np.add.at(grad, idx, g)
        return (grad,)

    return Tensor(out, _parents=(a,), op="take_rows", _vjp=vjp)


# -- normalizations -------------------------------------------------------


def softmax(a, axis=-1):
    """Numerically stable softmax; slices along `axis` sum to 1."""
    a = as_tensor(a)
    shifted = a.array - a.array.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, _parents=(a,), op="softmax", _vjp=vjp)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.array - a.array.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=axis, keepdims=True),)

    return Tensor(out, _parents=(a,), op="log_softmax", _vjp=vjp)


def l2_normalize(a, axis=-1, eps=1e-12):
    """Unit-norm slices along `axis`; slices with norm < eps pass through."""
    a = as_tensor(a)
    norm = np.sqrt((a.array**2).sum(axis=axis, keepdims=True))
    small = norm < eps
    safe = np.where(small, 1.0, norm)
    out = a.array / safe

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        dx = (g - out * dot) / safe
        return (np.where(small, g, dx),)

    return Tensor(out, _parents=(a,), op="l2_normalize", _vjp=vjp)


def layer_norm(a, gamma, beta, eps=1e-5):
    """Standardize over the last axis, then scale and shift."""
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match width {d}")
    mu = a.array.mean(axis=-1, keepdims=True)
    var = a.array.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.array - mu) * inv
    out = xhat * gamma.array + beta.array

    def vjp(g):
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        dxhat = g * gamma.array
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return (dx, dgamma, dbeta)

    return Tensor(out, _parents=(a, gamma, beta), op="layer_norm", _vjp=vjp)


def sum_pool(a, k):
    """Sum-pool with kernel and stride k over the last axis."""
    a = as_tensor(a)
    d = a.shape[-1]
    if k < 1 or d % k != 0:
        raise ShapeMismatchError(f"sum_pool: last axis {d} not divisible by kernel {k}")
    pooled_shape = a.shape[:-1] + (d // k, k)
    out = a.array.reshape(pooled_shape).sum(axis=-1)

    def vjp(g):
        return (np.repeat(g, k, axis=-1).reshape(a.shape),)

    return Tensor(out, _parents=(a,), op="sum_pool", _vjp=vjp)


def dropout(a, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor(mask, op="dropout_mask"))


# -- construction / rng ---------------------------------------------------


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def ones(shape, requires_grad=False):
    return Tensor(np.ones(shape), requires_grad=requires_grad)


def uniform(shape, rng, low=-1.0, high=1.0, requires_grad=False):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=requires_grad)


def normal(shape, rng, mean=0.0, std=1.0, requires_grad=False):
    return Tensor(rng.normal(mean, std, size=shape), requires_grad=requires_grad)


def rng_from_seed(seed):
    return np.random.default_rng(seed)


def split_rngs(seed, n):
    """n independent generators derived from one seed (splittable RNG)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]
