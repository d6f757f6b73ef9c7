"""Dense n-d array with reverse-mode automatic differentiation.

Covers exactly the operations the denoising network, the kernel engine and
the losses need: 2-d convolution with edge-replicate padding, 2x average
pooling, 2x bilinear upsampling, ReLU, channel concatenation, elementwise
arithmetic (with scalar broadcasting), abs, mean reduction, reshape and
axis-0 slicing.  Gradients accumulate across multiple uses of a tensor;
callers reset them explicitly (see ``zero_grad``).

Compute follows the dtype of the inputs: float32 for training, float64 for
gradient checking.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

Array = np.ndarray


class Tensor:
    """Array node in a backward tape.

    ``requires_grad=False`` marks a constant: it never receives a gradient.
    Interior nodes carry a closure that scatters the incoming gradient to
    their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: Array) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar, accumulating into leaf ``grad``s."""
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar ------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _result(data: Array, parents: Sequence[Tensor], backward) -> Tensor:
    """Wrap an op result, attaching the tape node only when needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward(out)
    else:
        out._parents = ()
        out._backward = None
    return out


def _binary_args(a, b) -> tuple[Tensor, Tensor]:
    # cast bare python scalars to the tensor operand's dtype so float32
    # pipelines stay float32
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    else:
        a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.data.size != 1 and b.data.size != 1:
        raise ValueError(
            f"elementwise op needs equal shapes or a scalar, got {a.shape} vs {b.shape}"
        )
    return a, b


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    # only scalar broadcasting is supported, so either shapes match or the
    # target is a (possibly 0-d) single element
    if g.shape == shape:
        return g
    return g.sum().reshape(shape)


def add(a, b) -> Tensor:
    a, b = _binary_args(a, b)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad, b.shape))

        return run

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _binary_args(a, b)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-out.grad, b.shape))

        return run

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _binary_args(a, b)

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

        return run

    return _result(a.data * b.data, (a, b), bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def bwd(out):
        def run():
            x._accumulate(out.grad * mask)

        return run

    return _result(np.where(mask, x.data, 0.0).astype(x.dtype), (x,), bwd)


def absolute(x) -> Tensor:
    """|x|, with subgradient 0 at exactly 0."""
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bwd(out):
        def run():
            x._accumulate(out.grad * sign)

        return run

    return _result(np.abs(x.data), (x,), bwd)


def reduce_mean(x) -> Tensor:
    x = as_tensor(x)
    n = x.data.size

    def bwd(out):
        def run():
            x._accumulate(np.full_like(x.data, out.grad / n))

        return run

    return _result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), bwd)


def mean_axis0(x) -> Tensor:
    """Mean over the leading axis; the gradient spreads back evenly."""
    x = as_tensor(x)
    if x.data.ndim < 1 or x.shape[0] == 0:
        raise ValueError(f"mean_axis0 needs a non-empty leading axis, got {x.shape}")
    n = x.shape[0]

    def bwd(out):
        def run():
            x._accumulate(np.broadcast_to(out.grad / n, x.shape))

        return run

    return _result(x.data.mean(axis=0), (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    new = x.data.reshape(shape)

    def bwd(out):
        def run():
            x._accumulate(out.grad.reshape(x.shape))

        return run

    return _result(new, (x,), bwd)


def concat_channels(a, b) -> Tensor:
    """Concatenate two [C,H,W] tensors along the channel axis."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 3 or b.data.ndim != 3:
        raise ValueError(
            f"concat_channels expects [C,H,W] inputs, got {a.shape} and {b.shape}"
        )
    if a.shape[1:] != b.shape[1:]:
        raise ValueError(
            f"concat_channels spatial mismatch: {a.shape[1:]} vs {b.shape[1:]}"
        )
    ca = a.shape[0]

    def bwd(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad[:ca])
            if b.requires_grad:
                b._accumulate(out.grad[ca:])

        return run

    return _result(np.concatenate([a.data, b.data], axis=0), (a, b), bwd)


def slice_axis0(x, index: int) -> Tensor:
    """Select ``x[index]``; the gradient scatters back into that slot."""
    x = as_tensor(x)

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[index] = out.grad
            x._accumulate(g)

        return run

    return _result(np.ascontiguousarray(x.data[index]), (x,), bwd)


# -- replicate padding and its adjoint --------------------------------


def _pad_edge(x: Array, r: int) -> Array:
    if r == 0:
        return x
    width = [(0, 0)] * (x.ndim - 2) + [(r, r), (r, r)]
    return np.pad(x, width, mode="edge")


def _pad_edge_adjoint(g: Array, r: int) -> Array:
    """Fold the gradient of an edge-replicated array back onto the source."""
    if r == 0:
        return g
    g = g.copy()
    h = g.shape[-2] - 2 * r
    w = g.shape[-1] - 2 * r
    g[..., r, :] += g[..., :r, :].sum(axis=-2)
    g[..., h + r - 1, :] += g[..., h + r :, :].sum(axis=-2)
    g = g[..., r : h + r, :]
    g[..., :, r] += g[..., :, :r].sum(axis=-1)
    g[..., :, w + r - 1] += g[..., :, w + r :].sum(axis=-1)
    return g[..., :, r : w + r]


# -- convolution -------------------------------------------------------


def conv2d(x, weight, bias) -> Tensor:
    """Cross-correlate [C,H,W] with [O,C,k,k] weights plus [O] bias.

    Spatial padding is edge replication, so the output is [O,H,W].
    Implemented as im2col + GEMM; the column matrix is kept for backward.
    """
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.data.ndim != 3:
        raise ValueError(f"conv2d input must be [C,H,W], got {x.shape}")
    if weight.data.ndim != 4:
        raise ValueError(f"conv2d weight must be [O,C,k,k], got {weight.shape}")
    o, cw, kh, kw = weight.shape
    c, h, w = x.shape
    if kh != kw or kh % 2 == 0:
        raise ValueError(f"conv2d kernel must be square and odd, got {kh}x{kw}")
    if cw != c:
        raise ValueError(
            f"conv2d channel mismatch: weight expects {cw} input channels, input has {c}"
        )
    if bias.shape != (o,):
        raise ValueError(f"conv2d bias must be [{o}], got {bias.shape}")
    k = kh
    r = k // 2

    xp = _pad_edge(x.data, r)
    # cols[(i,j), (c,u,v)] = xp[c, i+u, j+v]
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(h * w, c * k * k)
    wmat = weight.data.reshape(o, c * k * k)
    out = cols @ wmat.T + bias.data
    out = np.ascontiguousarray(out.T).reshape(o, h, w)

    def bwd(res):
        def run():
            go = res.grad.reshape(o, h * w)
            if bias.requires_grad:
                bias._accumulate(go.sum(axis=1))
            if weight.requires_grad:
                weight._accumulate((go @ cols).reshape(weight.shape))
            if x.requires_grad:
                gc = (go.T @ wmat).reshape(h, w, c, k, k)
                gxp = np.zeros_like(xp)
                for u in range(k):
                    for v in range(k):
                        gxp[:, u : u + h, v : v + w] += gc[:, :, :, u, v].transpose(
                            2, 0, 1
                        )
                x._accumulate(_pad_edge_adjoint(gxp, r))

        return run

    return _result(out, (x, weight, bias), bwd)


# -- pooling / upsampling ----------------------------------------------


def avg_pool2(x) -> Tensor:
    """2x2 average pooling over the last two axes; odd extents are an error."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even spatial extents, got {h}x{w}")
    lead = x.shape[:-2]
    pooled = x.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bwd(out):
        def run():
            g = out.grad.repeat(2, axis=-2).repeat(2, axis=-1) * x.dtype.type(0.25)
            x._accumulate(g)

        return run

    return _result(pooled, (x,), bwd)


@lru_cache(maxsize=None)
def _upsample_matrix(n: int, dtype_name: str) -> Array:
    """[2n, n] bilinear interpolation matrix, align-corners-false."""
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0 = np.floor(src).astype(int)
    frac = src - i0
    m = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(m, (rows, np.clip(i0, 0, n - 1)), 1.0 - frac)
    np.add.at(m, (rows, np.clip(i0 + 1, 0, n - 1)), frac)
    return m.astype(dtype_name)


def bilinear_upsample2(x) -> Tensor:
    """Double the last two axes by bilinear interpolation."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    uh = _upsample_matrix(h, x.dtype.name)
    uw = _upsample_matrix(w, x.dtype.name)
    out = uh @ x.data @ uw.T

    def bwd(res):
        def run():
            x._accumulate(uh.T @ res.grad @ uw)

        return run

    return _result(out, (x,), bwd)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.zero_grad()
