"""Minimal dense-tensor reverse-mode autodiff.

Covers exactly the ops needed for mean-field MLPs, small 2-D convolutions
and Gaussian ELBO terms: elementwise arithmetic, matmul, conv2d (stride 1
or 2, square kernel, zero padding), relu/sigmoid/log/exp/square,
sum/mean reductions, softmax cross-entropy and the per-feature /
per-channel scale-shift used by FiLM layers.

All data is float64. Tensors are immutable values; building an op appends
a node to an implicit tape (the parent links), and ``backward`` walks the
tape once in reverse topological order.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs do not conform (message names op and shapes)."""


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass produces NaN or Inf."""


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op}: non-finite values in forward output")


class Tensor:
    """Dense float64 array participating in reverse-mode differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(op={self._op}, shape={self.shape})"

    # -- graph construction helpers --------------------------------------

    @staticmethod
    def _result(op, data, parents, backward):
        _check_finite(op, data)
        out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
            out._op = op
        else:
            out._op = op
        return out

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-np.ones_like(self.data)))

    # -- reductions / conveniences ----------------------------------------

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def backward(self):
        backward(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _bias_broadcastable(a_shape, b_shape):
    # (..., F) + (F,) bias convention; the only broadcast add allows.
    return len(b_shape) == 1 and len(a_shape) >= 1 and a_shape[-1] == b_shape[0]


def add(a, b):
    if a.shape == b.shape:
        def back(g):
            return g, g
    elif _bias_broadcastable(a.shape, b.shape):
        axes = tuple(range(len(a.shape) - 1))

        def back(g):
            return g, g.sum(axis=axes)
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not conform")
    return Tensor._result("add", a.data + b.data, (a, b), back)


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not conform")
    return Tensor._result("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def back(g):
        ga = g * bd
        gb = g * ad
        if a.shape == ():
            ga = ga.sum()
        if b.shape == ():
            gb = gb.sum()
        return ga, gb

    return Tensor._result("mul", ad * bd, (a, b), back)


def matmul(a, b):
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    return Tensor._result(
        "matmul", ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g)
    )


def relu(a):
    mask = a.data > 0
    return Tensor._result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor._result("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def log(a):
    ad = a.data
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(ad)
    return Tensor._result("log", out, (a,), lambda g: (g / ad,))


def exp(a):
    with np.errstate(over="ignore"):
        e = np.exp(a.data)
    return Tensor._result("exp", e, (a,), lambda g: (g * e,))


def square(a):
    ad = a.data
    return Tensor._result("square", ad * ad, (a,), lambda g: (2.0 * g * ad,))


def tsum(a):
    shape = a.shape
    return Tensor._result(
        "sum", np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def tmean(a):
    shape = a.shape
    n = a.size
    return Tensor._result(
        "mean",
        np.asarray(a.data.mean()),
        (a,),
        lambda g: (np.broadcast_to(g / n, shape).copy(),),
    )


def softmax_cross_entropy(logits, labels):
    """Per-example cross-entropy of softmax(logits) against integer labels."""
    if len(logits.shape) != 2:
        raise ShapeError(f"softmax_cross_entropy: logits shape {logits.shape} is not 2-D")
    labels = np.asarray(labels)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: labels shape {labels.shape} does not match "
            f"batch of logits {logits.shape}"
        )
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    p = ez / ez.sum(axis=1, keepdims=True)
    idx = np.arange(z.shape[0])
    losses = -(z - zmax)[idx, labels] + np.log(ez.sum(axis=1))

    def back(g):
        gz = p * g[:, None]
        gz[idx, labels] -= g
        return (gz,)

    return Tensor._result("softmax_cross_entropy", losses, (logits,), back)


def scale_shift(x, gamma, shift):
    """FiLM transform: per-feature for 2-D input, per-channel for 4-D NCHW."""
    if len(x.shape) == 2:
        if gamma.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
            raise ShapeError(
                f"scale_shift: feature params {gamma.shape}/{shift.shape} do not "
                f"match input {x.shape}"
            )
        gd = gamma.data[None, :]
        axes = (0,)
    elif len(x.shape) == 4:
        if gamma.shape != (x.shape[1],) or shift.shape != (x.shape[1],):
            raise ShapeError(
                f"scale_shift: channel params {gamma.shape}/{shift.shape} do not "
                f"match input {x.shape}"
            )
        gd = gamma.data[None, :, None, None]
        axes = (0, 2, 3)
    else:
        raise ShapeError(f"scale_shift: input shape {x.shape} is not 2-D or 4-D")
    xd = x.data

    def back(g):
        ggamma = (g * xd).sum(axis=axes)
        gshift = g.sum(axis=axes)
        return g * gd, ggamma, gshift

    sd = shift.data.reshape(gd.shape)
    return Tensor._result("scale_shift", xd * gd + sd, (x, gamma, shift), back)


# -- convolution -----------------------------------------------------------


def _im2col(x, k, stride, pad):
    n, c, h, w = x.shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, k, k, ho, wo), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(n, c * k * k, ho * wo), ho, wo


def _col2im(cols, x_shape, k, stride, pad, ho, wo):
    n, c, h, w = x_shape
    cols = cols.reshape(n, c, k, k, ho, wo)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, kernel, stride=1, padding=0):
    """2-D convolution, NCHW input, (F, C, K, K) kernel, zero padding."""
    if len(x.shape) != 4 or len(kernel.shape) != 4:
        raise ShapeError(f"conv2d: input {x.shape} / kernel {kernel.shape} are not 4-D")
    if kernel.shape[2] != kernel.shape[3]:
        raise ShapeError(f"conv2d: kernel {kernel.shape} is not square")
    if kernel.shape[1] != x.shape[1]:
        raise ShapeError(
            f"conv2d: kernel channels {kernel.shape} do not match input {x.shape}"
        )
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride {stride} not supported (1 or 2)")
    f, c, k, _ = kernel.shape
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = kernel.data.reshape(f, c * k * k)
    out = np.einsum("fp,npq->nfq", wmat, cols).reshape(n, f, ho, wo)

    x_shape = x.shape

    def back(g):
        gmat = g.reshape(n, f, ho * wo)
        gw = np.einsum("nfq,npq->fp", gmat, cols).reshape(f, c, k, k)
        gcols = np.einsum("fp,nfq->npq", wmat, gmat)
        gx = _col2im(gcols, x_shape, k, stride, padding, ho, wo)
        return gx, gw

    return Tensor._result("conv2d", out, (x, kernel), back)


def max_pool2(x):
    """2x2 max pooling with stride 2 (NCHW)."""
    if len(x.shape) != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"max_pool2: input shape {x.shape} not 4-D with even H, W")
    n, c, h, w = x.shape
    r = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    out = r.max(axis=(3, 5))
    mask = r == out[:, :, :, None, :, None]
    # break ties deterministically: keep only the first max per window
    flat = mask.reshape(n, c, h // 2, w // 2, 4)
    first = np.cumsum(flat, axis=-1) == 1
    mask = (flat & first).reshape(n, c, h // 2, 2, w // 2, 2)

    def back(g):
        gr = mask * g[:, :, :, None, :, None]
        return (gr.reshape(n, c, h, w),)

    return Tensor._result("max_pool2", out, (x,), back)


def reshape(x, shape):
    old = x.shape
    return Tensor._result(
        "reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),)
    )


# -- backward pass ---------------------------------------------------------


def backward(loss):
    """Accumulate gradients of a scalar loss into every requires_grad leaf."""
    if loss.shape != ():
        raise ShapeError(f"backward: loss shape {loss.shape} is not scalar")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))

    grads = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64, copy=True)
