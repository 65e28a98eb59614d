"""Reverse-accumulation over the handful of operators the model needs.

Only matrices, row vectors and scalars flow through a graph. Each op stores
its parents and a closure that maps the upstream gradient to one gradient
per parent.
"""
from __future__ import annotations

import numpy as np

from .core import ZERO_NORM, Param
from .exceptions import GraphNotRecorded, NonFiniteInput, ShapeMismatch, ZeroRowNorm


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "param", "name")

    def __init__(self, value, parents=(), backward_fn=None, param: Param | None = None, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.param = param
        self.name = name

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def requires_grad(self) -> bool:
        return self.param is not None or bool(self.parents)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def constant(value, name=None) -> Tensor:
    return Tensor(np.asarray(value, dtype=np.float64) if not isinstance(value, np.ndarray) else value, name=name)


def leaf(param: Param, name=None) -> Tensor:
    return Tensor(param.value, param=param, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

    def back(g):
        return g @ b.value.T, a.value.T @ g

    return Tensor(a.value @ b.value, (a, b), back)


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.value + b.value

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, (a, b), back)


def scale(a, c: float) -> Tensor:
    a = _wrap(a)
    return Tensor(a.value * c, (a,), lambda g: (g * c,))


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def back(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)

    return Tensor(a.value * b.value, (a, b), back)


def sum_all(a) -> Tensor:
    a = _wrap(a)
    return Tensor(np.float64(np.sum(a.value)), (a,), lambda g: (np.full(a.shape, g),))


def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.value > 0

    def back(g):
        return (g * mask,)

    return Tensor(np.where(mask, a.value, 0.0), (a,), back)


def linear(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def l2_normalize(a) -> Tensor:
    a = _wrap(a)
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    if np.any(norms < ZERO_NORM):
        raise ZeroRowNorm(f"row {int(np.argmin(norms[:, 0]))} has zero norm")
    y = a.value / norms

    def back(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return Tensor(y, (a,), back)


def info_nce(anchor, target, tau: float) -> Tensor:
    """Mean over rows of -log softmax(anchor @ target.T / tau)[i, i]."""
    anchor, target = _wrap(anchor), _wrap(target)
    a, t = anchor.value, target.value
    if a.shape != t.shape:
        raise ShapeMismatch(f"anchor {a.shape} vs target {t.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(t))):
        raise NonFiniteInput("info_nce received non-finite features")
    n = a.shape[0]
    logits = (a @ t.T) / tau
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p_diag = np.diag(shifted) - log_z
    loss = -float(np.mean(log_p_diag))

    def back(g):
        p = np.exp(shifted - log_z[:, None])
        d_logits = (p - np.eye(n)) * (g / n)
        return (d_logits @ t) / tau, (d_logits.T @ a) / tau

    return Tensor(np.float64(loss), (anchor, target), back)


def cosine_loss(x, y) -> Tensor:
    """1 - mean row-wise cosine similarity; differentiable in both arguments."""
    x, y = _wrap(x), _wrap(y)
    if x.shape != y.shape:
        raise ShapeMismatch(f"{x.shape} vs {y.shape}")
    nx = np.linalg.norm(x.value, axis=1, keepdims=True)
    ny = np.linalg.norm(y.value, axis=1, keepdims=True)
    if np.any(nx < ZERO_NORM) or np.any(ny < ZERO_NORM):
        raise ZeroRowNorm("cosine of a zero row")
    cos = np.sum(x.value * y.value, axis=1, keepdims=True) / (nx * ny)
    n = x.shape[0]

    def back(g):
        c = -g / n
        gx = c * (y.value / (nx * ny) - cos * x.value / nx**2)
        gy = c * (x.value / (nx * ny) - cos * y.value / ny**2)
        return gx, gy

    return Tensor(np.float64(1.0 - float(np.mean(cos))), (x, y), back)


def weighted_sum(terms) -> Tensor:
    """Sum of ``w * t`` over ``(w, t)`` pairs of scalar tensors."""
    terms = [(float(w), _wrap(t)) for w, t in terms]
    total = 0.0
    for w, t in terms:
        total += w * float(t.value)
    weights = [w for w, _ in terms]

    def back(g):
        return tuple(g * w for w in weights)

    return Tensor(np.float64(total), tuple(t for _, t in terms), back)


def _topological(root: Tensor):
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
    return order[::-1]


def backward(root: Tensor):
    """Accumulate d(root)/d(param) into every reachable parameter's ``grad``."""
    if not isinstance(root, Tensor) or not root.requires_grad:
        raise GraphNotRecorded("backward() needs the output of a recorded forward pass")
    if np.ndim(root.value) != 0:
        raise ShapeMismatch(f"backward() needs a scalar root, got shape {root.shape}")
    grads = {id(root): np.float64(1.0)}
    for node in _topological(root):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.param is not None:
            node.param.grad += g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
