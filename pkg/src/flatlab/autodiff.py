"""Reverse-mode differentiation over a fixed op set on float64 arrays.

The graph is built eagerly by the op functions below and walked in reverse
topological order by :func:`backward`. The op set is intentionally closed:
dense affine maps, valid 2-d convolution, batch normalization, a few
elementwise nonlinearities, softmax cross-entropy and mean reduction cover
the whole model zoo. There is no support for higher-order derivatives.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


class Tensor:
    """A node in the computation graph: a value plus its gradient slot."""

    __slots__ = ("value", "grad", "_parents", "_push")

    def __init__(self, value, parents=(), push=None) -> None:
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(parents)
        self._push: Callable[[np.ndarray], None] | None = push

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``grad`` of every reachable node.

    ``root`` must be a scalar. Gradient slots of the subgraph are cleared
    first, so a tensor can participate in several backward passes.
    """
    if root.value.ndim != 0:
        raise ValueError("backward expects a scalar root")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    for node in order:
        node.grad = None
    root.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._push is not None and node.grad is not None:
            node._push(node.grad)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over the axes numpy broadcasting introduced for ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    value = a.value + b.value

    def push(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return Tensor(value, (a, b), push)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-d operands")

    def push(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    return Tensor(a.value @ b.value, (a, b), push)


def transpose(a: Tensor) -> Tensor:
    if a.value.ndim != 2:
        raise ValueError("transpose expects a 2-d operand")

    def push(g):
        _accum(a, g.T)

    return Tensor(a.value.T, (a,), push)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def push(g):
        _accum(a, g.reshape(a.value.shape))

    return Tensor(a.value.reshape(shape), (a,), push)


def scale(a: Tensor, c: float) -> Tensor:
    def push(g):
        _accum(a, c * g)

    return Tensor(c * a.value, (a,), push)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0.0  # subgradient 0 at the kink

    def push(g):
        _accum(a, g * mask)

    return Tensor(a.value * mask, (a,), push)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)

    def push(g):
        _accum(a, g * (1.0 - y * y))

    return Tensor(y, (a,), push)


def square(a: Tensor) -> Tensor:
    def push(g):
        _accum(a, 2.0 * a.value * g)

    return Tensor(a.value * a.value, (a,), push)


def mean(a: Tensor) -> Tensor:
    n = a.value.size

    def push(g):
        _accum(a, np.broadcast_to(g / n, a.value.shape))

    return Tensor(a.value.mean(), (a,), push)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Per-example cross-entropy of softmax(logits) against integer labels.

    Returns a length-N tensor of losses; the softmax is computed with the
    usual max-shift for stability.
    """
    z = logits.value
    if z.ndim != 2:
        raise ValueError("softmax_cross_entropy expects (N, C) logits")
    labels = np.asarray(labels)
    n, c = z.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match {n} examples")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label outside [0, C)")
    shifted = z - z.max(axis=1, keepdims=True)
    ez = np.exp(shifted)
    sez = ez.sum(axis=1, keepdims=True)
    logp = shifted - np.log(sez)
    rows = np.arange(n)
    losses = -logp[rows, labels]

    def push(g):
        dz = (ez / sez) * g[:, None]
        dz[rows, labels] -= g
        _accum(logits, dz)

    return Tensor(losses, (logits,), push)


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    n, c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = np.empty((n, c, k, k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j, :, :] = x[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def _col2im(dcols: np.ndarray, x_shape: tuple[int, ...], k: int, stride: int) -> np.ndarray:
    ho, wo = dcols.shape[-2], dcols.shape[-1]
    dx = np.zeros(x_shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            dx[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, :, i, j, :, :]
    return dx


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-d convolution of NCHW inputs with OIKK filters.

    ``b`` may be None for bias-free convolutions (the usual choice when a
    batch-norm layer follows, since normalization cancels any bias).
    """
    xv, wv = x.value, w.value
    if xv.ndim != 4 or wv.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OIKK weights")
    n, c, h, wd = xv.shape
    o, ci, k, k2 = wv.shape
    if ci != c or k != k2:
        raise ValueError(f"filter shape {wv.shape} incompatible with input {xv.shape}")
    if k > h or k > wd:
        raise ValueError("filter larger than input")
    cols, ho, wo = _im2col(xv, k, stride)
    w2 = wv.reshape(o, -1)
    out = np.einsum("of,nfl->nol", w2, cols).reshape(n, o, ho, wo)
    if b is not None:
        out += b.value.reshape(1, o, 1, 1)

    def push(g):
        g2 = g.reshape(n, o, ho * wo)
        if b is not None:
            _accum(b, g2.sum(axis=(0, 2)))
        _accum(w, np.einsum("nol,nfl->of", g2, cols).reshape(wv.shape))
        dcols = np.einsum("of,nol->nfl", w2, g2).reshape(n, c, k, k, ho, wo)
        _accum(x, _col2im(dcols, xv.shape, k, stride))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor(out, parents, push)


def _bn_axes(x: np.ndarray) -> tuple[int, ...]:
    if x.ndim == 2:
        return (0,)
    if x.ndim == 4:
        return (0, 2, 3)
    raise ValueError("batch norm expects 2-d or 4-d input")


def _bn_bshape(x: np.ndarray) -> tuple[int, ...]:
    return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)


def batch_norm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize by batch statistics; returns (output, batch mean, batch var).

    Statistics are per feature for 2-d input and per channel for 4-d input;
    the variance is the population variance. The backward pass includes the
    dependence of the statistics on the input.
    """
    xv = x.value
    axes = _bn_axes(xv)
    bshape = _bn_bshape(xv)
    m = 1.0
    for a in axes:
        m *= xv.shape[a]
    mean_ = xv.mean(axis=axes)
    var_ = xv.var(axis=axes)
    mean_b = mean_.reshape(bshape)
    inv = 1.0 / np.sqrt(var_.reshape(bshape) + eps)
    xm = xv - mean_b
    xhat = xm * inv
    gv = gamma.value.reshape(bshape)
    out = gv * xhat + beta.value.reshape(bshape)

    def push(g):
        dxhat = g * gv
        dvar = np.sum(dxhat * xm, axis=axes, keepdims=True) * (-0.5) * inv**3
        dmean = -np.sum(dxhat, axis=axes, keepdims=True) * inv
        dmean += dvar * (-2.0 / m) * np.sum(xm, axis=axes, keepdims=True)
        _accum(x, dxhat * inv + dvar * (2.0 / m) * xm + dmean / m)
        _accum(gamma, np.sum(g * xhat, axis=axes))
        _accum(beta, np.sum(g, axis=axes))

    return Tensor(out, (x, gamma, beta), push), mean_, var_


def batch_norm_eval(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize by frozen statistics; a pure affine map of the input."""
    xv = x.value
    axes = _bn_axes(xv)
    bshape = _bn_bshape(xv)
    inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
    xm = xv - running_mean.reshape(bshape)
    xhat = xm * inv
    gv = gamma.value.reshape(bshape)
    out = gv * xhat + beta.value.reshape(bshape)

    def push(g):
        _accum(x, g * gv * inv)
        _accum(gamma, np.sum(g * xhat, axis=axes))
        _accum(beta, np.sum(g, axis=axes))

    return Tensor(out, (x, gamma, beta), push)
