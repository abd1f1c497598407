"""Dense tensors with reverse-mode automatic differentiation.

Only the operations the rest of the package needs are provided. Every
differentiable op records its parents and a closure that maps the output
gradient to one gradient per parent; :meth:`Tensor.backward` walks the graph
in reverse topological order.

Default compute dtype is float32. Arrays passed in as float64 stay float64,
which is how the gradient checks run.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEFAULT_DTYPE = np.float32

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- autodiff ------------------------------------------------------------
    def backward(self) -> None:
        """Populate ``grad`` on every tensor reachable from this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise RuntimeError("loss does not depend on any tensor requiring grad")

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def _topological_order(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, a)
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    return _result(
        a.data**exponent, (a,), lambda g: (g * exponent * a.data ** (exponent - 1),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1 - out * out),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)
    return _result(out, (a,), lambda g: (g * out * (1 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    return _result(
        a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g)
    )


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result(np.asarray(out), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else np.argsort(axes)
    return _result(
        np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),)
    )


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    soft = np.exp(out)
    return _result(
        out, (a,), lambda g: (g - soft * g.sum(axis=axis, keepdims=True),)
    )


def embedding(weight: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def backward(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return _result(weight.data[idx], (weight,), backward)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (N, K) logits against integer labels."""
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 2 or target.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy got logits {logits.shape}, target {target.shape}")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), target].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), target] -= 1
        return (d * (g / n),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def bce_with_logits(logits: Tensor, target: np.ndarray, pos_weight: float = 1.0) -> Tensor:
    """Mean binary cross-entropy on raw logits; ``pos_weight`` scales positives."""
    y = np.asarray(target, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise ShapeError(f"bce target {y.shape} does not match logits {logits.shape}")
    z = logits.data
    softplus_pos = np.logaddexp(0, z)
    softplus_neg = np.logaddexp(0, -z)
    loss = (pos_weight * y * softplus_neg + (1 - y) * softplus_pos).mean()
    s = _sigmoid_np(z)

    def backward(g):
        d = -pos_weight * y * (1 - s) + (1 - y) * s
        return (d * (g / z.size),)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    diff = pred - _as_tensor(target, pred)
    return (diff * diff).mean()


# ---------------------------------------------------------------------------
# spatial ops; all take (N, C, H, W) or (C, H, W)
# ---------------------------------------------------------------------------


def _to4d(x: np.ndarray, name: str) -> tuple[np.ndarray, bool]:
    if x.ndim == 4:
        return x, False
    if x.ndim == 3:
        return x[None], True
    raise ShapeError(f"{name} expects (C,H,W) or (N,C,H,W), got shape {x.shape}")


def _pad_amounts(padding) -> tuple[int, int, int, int]:
    if isinstance(padding, int):
        return padding, padding, padding, padding
    top, bottom, left, right = padding
    return top, bottom, left, right


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """Zero-padded cross-correlation.

    ``weight`` has shape (C_out, C_in // groups, kh, kw). ``padding`` is an
    int or a (top, bottom, left, right) tuple.
    """
    xd, squeezed = _to4d(x.data, "conv2d")
    n, c_in, h, w = xd.shape
    c_out, c_per_group, kh, kw = weight.shape
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if c_in % groups or c_out % groups or c_in // groups != c_per_group:
        raise ShapeError(
            f"conv2d: input has {c_in} channels but weight {weight.shape} with groups={groups}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({c_out},)")
    pt, pb, pl, pr = _pad_amounts(padding)
    hp, wp = h + pt + pb, w + pl + pr
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d: padded input {hp}x{wp} smaller than kernel {kh}x{kw}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    wd = weight.data
    g_in, g_out = c_in // groups, c_out // groups
    depthwise = groups == c_in and groups == c_out

    def patch(arr, i, j):
        return arr[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride]

    out = np.zeros((n, c_out, ho, wo), dtype=np.result_type(xd, wd))
    for i in range(kh):
        for j in range(kw):
            xs = patch(xp, i, j)
            if groups == 1:
                out += np.tensordot(wd[:, :, i, j], xs, axes=([1], [1])).transpose(1, 0, 2, 3)
            elif depthwise:
                out += xs * wd[:, 0, i, j][None, :, None, None]
            else:
                xs_g = xs.reshape(n, groups, g_in, ho, wo)
                w_g = wd[:, :, i, j].reshape(groups, g_out, g_in)
                out += np.einsum("gdc,ngchw->ngdhw", w_g, xs_g).reshape(n, c_out, ho, wo)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def backward(g):
        g4 = g[None] if squeezed else g
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(wd) if weight.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                xs = patch(xp, i, j)
                if groups == 1:
                    if gw is not None:
                        gw[:, :, i, j] = np.tensordot(g4, xs, axes=([0, 2, 3], [0, 2, 3]))
                    if gxp is not None:
                        patch(gxp, i, j)[...] += np.tensordot(
                            wd[:, :, i, j], g4, axes=([0], [1])
                        ).transpose(1, 0, 2, 3)
                elif depthwise:
                    if gw is not None:
                        gw[:, 0, i, j] = (g4 * xs).sum(axis=(0, 2, 3))
                    if gxp is not None:
                        patch(gxp, i, j)[...] += g4 * wd[:, 0, i, j][None, :, None, None]
                else:
                    gg = g4.reshape(n, groups, g_out, ho, wo)
                    xs_g = xs.reshape(n, groups, g_in, ho, wo)
                    w_g = wd[:, :, i, j].reshape(groups, g_out, g_in)
                    if gw is not None:
                        gw[:, :, i, j] = np.einsum("ngdhw,ngchw->gdc", gg, xs_g).reshape(c_out, g_in)
                    if gxp is not None:
                        patch(gxp, i, j)[...] += np.einsum("gdc,ngdhw->ngchw", w_g, gg).reshape(
                            n, c_in, ho, wo
                        )
        gx = None
        if gxp is not None:
            gx = gxp[:, :, pt : pt + h, pl : pl + w]
            gx = gx[0] if squeezed else gx
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out[0] if squeezed else out, parents, backward)


def conv_transpose2d(
    x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Transposed convolution; ``weight`` has shape (C_in, C_out, k, k)."""
    xd, squeezed = _to4d(x.data, "conv_transpose2d")
    n, c_in, h, w = xd.shape
    if weight.shape[0] != c_in:
        raise ShapeError(f"conv_transpose2d: input has {c_in} channels, weight {weight.shape}")
    _, c_out, kh, kw = weight.shape
    hf, wf = (h - 1) * stride + kh, (w - 1) * stride + kw
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho < 1 or wo < 1:
        raise ShapeError("conv_transpose2d: padding leaves an empty output")
    wd = weight.data

    def patch(arr, i, j):
        return arr[:, :, i : i + stride * (h - 1) + 1 : stride, j : j + stride * (w - 1) + 1 : stride]

    full = np.zeros((n, c_out, hf, wf), dtype=np.result_type(xd, wd))
    for i in range(kh):
        for j in range(kw):
            patch(full, i, j)[...] += np.tensordot(wd[:, :, i, j], xd, axes=([0], [1])).transpose(
                1, 0, 2, 3
            )
    out = full[:, :, padding : padding + ho, padding : padding + wo]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        g4 = g[None] if squeezed else g
        gfull = np.zeros((n, c_out, hf, wf), dtype=g4.dtype)
        gfull[:, :, padding : padding + ho, padding : padding + wo] = g4
        gx = np.zeros_like(xd)
        gw = np.zeros_like(wd)
        for i in range(kh):
            for j in range(kw):
                gs = patch(gfull, i, j)
                gx += np.tensordot(wd[:, :, i, j], gs, axes=([1], [1])).transpose(1, 0, 2, 3)
                gw[:, :, i, j] = np.tensordot(xd, gs, axes=([0, 2, 3], [0, 2, 3]))
        gb = g4.sum(axis=(0, 2, 3)) if bias is not None else None
        return (gx[0] if squeezed else gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out[0] if squeezed else out, parents, backward)


def pool2d(x: Tensor, mode: str, k: int, stride: int | None = None, padding: int = 0) -> Tensor:
    """Max, min or average pooling over k x k windows.

    Padding (off by default) reads the neutral element, so it never wins a
    max/min and is excluded from the average's count. Max/min gradients go to
    the first attaining element in row-major window order.
    """
    if mode not in ("max", "min", "avg"):
        raise ValueError(f"unknown pooling mode {mode!r}")
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ShapeError(f"pool2d needs k >= 1 and stride >= 1, got k={k}, stride={stride}")
    xd, squeezed = _to4d(x.data, "pool2d")
    n, c, h, w = xd.shape
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"pool2d: window {k}x{k} larger than input {h}x{w}")
    fill = {"max": -np.inf, "min": np.inf, "avg": 0.0}[mode]
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=fill)
    hp, wp = xp.shape[2:]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    flat = win.reshape(n, c, ho, wo, k * k)

    if mode == "avg":
        if padding:
            ones = np.pad(np.ones((h, w), dtype=xd.dtype), padding)
            count = sliding_window_view(ones, (k, k))[::stride, ::stride].sum(axis=(-1, -2))
        else:
            count = np.full((ho, wo), k * k, dtype=xd.dtype)
        out = flat.sum(axis=-1) / count

        def backward(g):
            g4 = (g[None] if squeezed else g) / count
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += g4
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
            return (gx[0] if squeezed else gx,)

    else:
        idx = flat.argmax(axis=-1) if mode == "max" else flat.argmin(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

        def backward(g):
            g4 = g[None] if squeezed else g
            rows = np.arange(ho)[:, None] * stride + idx // k
            cols = np.arange(wo)[None, :] * stride + idx % k
            base = (np.arange(n * c) * (hp * wp)).reshape(n, c, 1, 1)
            lin = base + rows * wp + cols
            gxp = np.bincount(lin.ravel(), weights=g4.ravel(), minlength=n * c * hp * wp)
            gxp = gxp.astype(xd.dtype).reshape(n, c, hp, wp)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
            return (gx[0] if squeezed else gx,)

    out = out.astype(xd.dtype, copy=False)
    return _result(out[0] if squeezed else out, (x,), backward)


def _shuffle_np(xd: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = xd.shape
    c_out = c // (r * r)
    return xd.reshape(n, c_out, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c_out, h * r, w * r)


def _unshuffle_np(xd: np.ndarray, r: int) -> np.ndarray:
    n, c, h, w = xd.shape
    return (
        xd.reshape(n, c, h // r, r, w // r, r)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, c * r * r, h // r, w // r)
    )


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(C*r*r, H, W) -> (C, H*r, W*r).

    ``out[c, h*r + a, w*r + b] = in[c*r*r + a*r + b, h, w]``.
    """
    xd, squeezed = _to4d(x.data, "pixel_shuffle")
    if r < 1 or xd.shape[1] % (r * r):
        raise ShapeError(f"pixel_shuffle: {xd.shape[1]} channels not divisible by r^2={r * r}")
    out = _shuffle_np(xd, r)

    def backward(g):
        gx = _unshuffle_np(g[None] if squeezed else g, r)
        return (gx[0] if squeezed else gx,)

    return _result(out[0] if squeezed else out, (x,), backward)


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    xd, squeezed = _to4d(x.data, "pixel_unshuffle")
    if r < 1 or xd.shape[2] % r or xd.shape[3] % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {xd.shape[2:]} not divisible by {r}")
    out = _unshuffle_np(xd, r)

    def backward(g):
        gx = _shuffle_np(g[None] if squeezed else g, r)
        return (gx[0] if squeezed else gx,)

    return _result(out[0] if squeezed else out, (x,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalisation.

    In training mode the running buffers are updated in place:
    ``running = (1 - momentum) * running + momentum * batch_stat``, where the
    variance statistic is the unbiased batch variance.
    """
    xd, squeezed = _to4d(x.data, "batch_norm")
    n, c, h, w = xd.shape
    if running_mean.shape != (c,) or running_var.shape != (c,) or gamma.shape != (c,):
        raise ShapeError(f"batch_norm: stats for {running_mean.shape[0]} channels, input has {c}")
    if training:
        m = n * h * w
        if m == 0:
            raise ShapeError("batch_norm: empty batch in training mode")
        mu = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        unbiased = var * m / (m - 1) if m > 1 else var
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean.astype(xd.dtype), running_var.astype(xd.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def backward(g):
        g4 = g[None] if squeezed else g
        gg = (g4 * xhat).sum(axis=(0, 2, 3))
        gb = g4.sum(axis=(0, 2, 3))
        dxhat = g4 * gamma.data[None, :, None, None]
        if training:
            mcount = n * h * w
            gx = (inv[None, :, None, None] / mcount) * (
                mcount * dxhat
                - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
            )
        else:
            gx = dxhat * inv[None, :, None, None]
        return (gx[0] if squeezed else gx, gg, gb)

    return _result(out[0] if squeezed else out, (x, gamma, beta), backward)


def _bilinear_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    # half-pixel centres, edge-clamped
    scale = n_in / n_out
    src = np.clip((np.arange(n_out) + 0.5) * scale - 0.5, 0, None)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in), dtype=dtype)
    np.add.at(m, (np.arange(n_out), i0), 1 - frac)
    np.add.at(m, (np.arange(n_out), i1), frac)
    return m


def upsample_bilinear(x: Tensor, size: tuple[int, int]) -> Tensor:
    xd, squeezed = _to4d(x.data, "upsample_bilinear")
    ah = _bilinear_matrix(xd.shape[2], size[0], xd.dtype)
    aw = _bilinear_matrix(xd.shape[3], size[1], xd.dtype)
    out = np.einsum("oh,nchw,pw->ncop", ah, xd, aw, optimize=True)

    def backward(g):
        g4 = g[None] if squeezed else g
        gx = np.einsum("oh,ncop,pw->nchw", ah, g4, aw, optimize=True)
        return (gx[0] if squeezed else gx,)

    return _result(out[0] if squeezed else out, (x,), backward)


def upsample_nearest(x: Tensor, s: int) -> Tensor:
    xd, squeezed = _to4d(x.data, "upsample_nearest")
    out = xd.repeat(s, axis=2).repeat(s, axis=3)

    def backward(g):
        g4 = g[None] if squeezed else g
        n, c, h, w = xd.shape
        gx = g4.reshape(n, c, h, s, w, s).sum(axis=(3, 5))
        return (gx[0] if squeezed else gx,)

    return _result(out[0] if squeezed else out, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / (1 - p)
    return _result(x.data * keep, (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# recurrent
# ---------------------------------------------------------------------------


def lstm_step(x, h, c, w_ih, w_hh, b):
    """One LSTM step on plain arrays; gate order is (input, forget, cell, output)."""
    hid = h.shape[1]
    z = x @ w_ih + h @ w_hh + b
    i = _sigmoid_np(z[:, :hid])
    f = _sigmoid_np(z[:, hid : 2 * hid])
    gg = np.tanh(z[:, 2 * hid : 3 * hid])
    o = _sigmoid_np(z[:, 3 * hid :])
    c_new = f * c + i * gg
    h_new = o * np.tanh(c_new)
    return h_new, c_new, (i, f, gg, o)


def lstm(x: Tensor, h0: Tensor, c0: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor) -> Tensor:
    """Run an LSTM over (N, T, I) inputs and return all hidden states (N, T, H)."""
    n, t_len, _ = x.shape
    hid = h0.shape[1]
    if w_ih.shape != (x.shape[2], 4 * hid) or w_hh.shape != (hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeError("lstm: parameter shapes inconsistent with input/hidden sizes")
    hs, cs, gates = [], [], []
    h, c = h0.data, c0.data
    for t in range(t_len):
        cs.append(c)
        hs.append(h)
        h, c, gt = lstm_step(x.data[:, t], h, c, w_ih.data, w_hh.data, b.data)
        gates.append(gt)
    cs.append(c)
    hs.append(h)
    out = np.stack(hs[1:], axis=1)

    def backward(g):
        gx = np.zeros_like(x.data)
        gwih = np.zeros_like(w_ih.data)
        gwhh = np.zeros_like(w_hh.data)
        gb = np.zeros_like(b.data)
        dh_next = np.zeros_like(h0.data)
        dc_next = np.zeros_like(c0.data)
        for t in reversed(range(t_len)):
            i, f, gg, o = gates[t]
            c_t = cs[t + 1]
            tc = np.tanh(c_t)
            dh = g[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * gg
            df = dc * cs[t]
            dg = dc * i
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), dg * (1 - gg * gg), do * o * (1 - o)], axis=1
            )
            gx[:, t] = dz @ w_ih.data.T
            gwih += x.data[:, t].T @ dz
            gwhh += hs[t].T @ dz
            gb += dz.sum(axis=0)
            dh_next = dz @ w_hh.data.T
            dc_next = dc * f
        return (gx, dh_next, dc_next, gwih, gwhh, gb)

    return _result(out, (x, h0, c0, w_ih, w_hh, b), backward)
