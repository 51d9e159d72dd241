"""Dense float64 tensors with reverse-mode autodiff and an Adam optimizer.

Deliberately small: every primitive wires its parents and one
vector-Jacobian closure per parent into the result node, and
``backward`` walks the recorded graph once in reverse topological
order. Everything is 64-bit. No broadcasting except the bias add in
``affine``; shape mismatches raise with both shapes in the message.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class Tensor:
    """A node in the autodiff graph: value + parents + local gradients."""

    __slots__ = ("data", "parents", "vjps")

    def __init__(self, data, parents=(), vjps=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps
        assert np.all(np.isfinite(self.data)), "non-finite entries in tensor"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # Operator sugar; the named functions below do the work.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tslice(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_same_shape(op, a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} differ")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("add", a, b)
    return Tensor(a.data + b.data, (a, b), (lambda g: g, lambda g: g))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("sub", a, b)
    return Tensor(a.data - b.data, (a, b), (lambda g: g, lambda g: -g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mul", a, b)
    return Tensor(
        a.data * b.data,
        (a, b),
        (lambda g, bd=b.data: g * bd, lambda g, ad=a.data: g * ad),
    )


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return Tensor(a.data * c, (a,), (lambda g: g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} incompatible")
    return Tensor(
        a.data @ b.data,
        (a, b),
        (lambda g, bd=b.data: g @ bd.T, lambda g, ad=a.data: ad.T @ g),
    )


def affine(x, w, b) -> Tensor:
    """x @ w + b with b broadcast over rows; the only broadcast allowed."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2:
        raise ShapeError(f"affine: input must be 2-D, got {x.data.shape}")
    if w.data.ndim != 2 or x.data.shape[1] != w.data.shape[0]:
        raise ShapeError(f"affine: shapes {x.data.shape} and {w.data.shape} incompatible")
    if b.data.shape != (w.data.shape[1],):
        raise ShapeError(f"affine: bias {b.data.shape} does not match width {w.data.shape[1]}")
    return Tensor(
        x.data @ w.data + b.data,
        (x, w, b),
        (
            lambda g, wd=w.data: g @ wd.T,
            lambda g, xd=x.data: xd.T @ g,
            lambda g: g.sum(axis=0),
        ),
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = (x.data > 0).astype(np.float64)
    return Tensor(x.data * mask, (x,), (lambda g, m=mask: g * m,))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = 1.0 / (1.0 + np.exp(-x.data))
    local = s * (1.0 + x.data * (1.0 - s))
    return Tensor(x.data * s, (x,), (lambda g, d=local: g * d,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return Tensor(out, (x,), (lambda g, o=out: g * (1.0 - o * o),))


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance (no learned affine)."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv

    def vjp(g, y=y, inv=inv):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (g - gm - y * gym) * inv

    return Tensor(y, (x,), (vjp,))


def concat(parts, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat: empty input")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(idx)]

        return vjp

    return Tensor(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def tslice(x, key) -> Tensor:
    """Basic-indexing slice; gradient scatters back into a zero tensor."""
    x = as_tensor(x)
    out = x.data[key]

    def vjp(g, shape=x.data.shape, key=key):
        gz = np.zeros(shape)
        np.add.at(gz, key, g)
        return gz

    return Tensor(out, (x,), (vjp,))


def mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size
    return Tensor(x.data.mean(), (x,), (lambda g, n=n, s=x.data.shape: np.full(s, g / n),))


def tsum(x) -> Tensor:
    x = as_tensor(x)
    return Tensor(x.data.sum(), (x,), (lambda g, s=x.data.shape: np.full(s, g),))


def sum_sq(x) -> Tensor:
    x = as_tensor(x)
    return Tensor((x.data * x.data).sum(), (x,), (lambda g, d=x.data: 2.0 * d * g,))


def mse(a, b) -> Tensor:
    """Mean squared error between two same-shaped tensors, as a scalar node."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape("mse", a, b)
    return scale(sum_sq(sub(a, b)), 1.0 / a.data.size)


def _topo_order(root: Tensor) -> list:
    """Iterative post-order: every node appears after all of its parents."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to each tensor in `wrt`.

    Visits each recorded node exactly once; tensors not on a path to the
    loss get zero gradients. Gradients into leaves nobody asked for are
    skipped, which keeps input-gradient queries cheap.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {loss.data.shape}")
    wrt_ids = {id(t) for t in wrt}
    order = _topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.parents and id(parent) not in wrt_ids:
                continue
            contrib = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = contrib if acc is None else acc + contrib
    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed like the parameter dict."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[str, np.ndarray]) -> dict[str, Tensor]:
    """One in-place Adam update; returns the same parameter dict."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad {g.shape} vs param {p.data.shape} for '{name}'")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
