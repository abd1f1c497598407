"""Parameterised layers, containers and optimisers on top of :mod:`morphnas.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _rng(rng: np.random.Generator | None) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=T.DEFAULT_DTYPE), requires_grad=True)


class Module:
    """Minimal module base: attribute discovery of parameters, submodules and buffers."""

    training = True

    def __init__(self):
        self._buffers: dict[str, np.ndarray] = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        if not hasattr(self, "_buffers"):
            self._buffers = {}
        self._buffers[name] = value

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if name == "_buffers":
                continue
            if isinstance(value, (Module, Tensor)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Tensor)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif value.requires_grad:
                yield full, value

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, buf in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{name}", buf
        for name, value in self._children():
            if isinstance(value, Module):
                yield from value.named_buffers(f"{prefix}{name}.")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(params) | set(buffers)) - set(state)
        unexpected = set(state) - set(params) - set(buffers)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise T.ShapeError(f"{name}: checkpoint shape {state[name].shape} != {p.shape}")
            p.data = state[name].astype(p.dtype)
        for name, b in buffers.items():
            b[...] = state[name]

    def to(self, dtype) -> "Module":
        """Cast parameters and buffers in place (used for 64-bit gradient checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for key, buf in list(getattr(m, "_buffers", {}).items()):
                m._buffers[key] = buf.astype(dtype)
        return self

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


class Identity(Module):
    def forward(self, x):
        return x


class ReLU(Module):
    def forward(self, x):
        return T.relu(x)


class Flatten(Module):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        k: int,
        stride: int = 1,
        padding=0,
        groups: int = 1,
        bias: bool = True,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        if k < 1 or c_out < 1:
            raise T.ShapeError(f"Conv2d needs k >= 1 and c_out >= 1, got k={k}, c_out={c_out}")
        bound = 1.0 / math.sqrt(c_in // groups * k * k)
        rng = _rng(rng)
        self.weight = parameter(rng.uniform(-bound, bound, (c_out, c_in // groups, k, k)))
        self.bias = parameter(rng.uniform(-bound, bound, c_out)) if bias else None
        self.stride, self.padding, self.groups = stride, padding, groups

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class ConvTranspose2d(Module):
    def __init__(self, c_in, c_out, k, stride=1, padding=0, bias=True, rng=None):
        super().__init__()
        bound = 1.0 / math.sqrt(c_in * k * k)
        rng = _rng(rng)
        self.weight = parameter(rng.uniform(-bound, bound, (c_in, c_out, k, k)))
        self.bias = parameter(rng.uniform(-bound, bound, c_out)) if bias else None
        self.stride, self.padding = stride, padding

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    """Batch norm with learnable scale/shift.

    ``bypass`` turns the layer into an exact identity, which is how the
    pseudo-morphological layers are collapsed onto their classical oracles.
    """

    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, affine: bool = True):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=T.DEFAULT_DTYPE), requires_grad=affine)
        self.beta = Tensor(np.zeros(channels, dtype=T.DEFAULT_DTYPE), requires_grad=affine)
        self.register_buffer("running_mean", np.zeros(channels, dtype=T.DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(channels, dtype=T.DEFAULT_DTYPE))
        self.momentum, self.eps = momentum, eps
        self.bypass = False

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def freeze_identity(self) -> None:
        self.gamma.data[...] = 1
        self.beta.data[...] = 0
        self.running_mean[...] = 0
        self.running_var[...] = 1
        self.bypass = True

    def forward(self, x):
        if self.bypass:
            return x
        return T.batch_norm(
            x, self.gamma, self.beta, self.running_mean, self.running_var,
            self.training, self.momentum, self.eps,
        )


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True, rng=None):
        super().__init__()
        bound = 1.0 / math.sqrt(d_in)
        rng = _rng(rng)
        self.weight = parameter(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = parameter(rng.uniform(-bound, bound, d_out)) if bias else None

    def forward(self, x):
        lead = x.shape[:-1]
        if len(lead) != 1:
            x = x.reshape(-1, x.shape[-1])
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y.reshape(*lead, y.shape[-1]) if len(lead) != 1 else y


class Dropout(Module):
    def __init__(self, p: float, rng=None):
        super().__init__()
        self.p = p
        self.rng = _rng(rng)

    def forward(self, x):
        return T.dropout(x, self.p, self.rng, self.training)


class Embedding(Module):
    def __init__(self, vocab: int, dim: int, rng=None):
        super().__init__()
        self.weight = parameter(_rng(rng).normal(0, 0.1, (vocab, dim)))

    def forward(self, idx):
        return T.embedding(self.weight, idx)


class LSTM(Module):
    """Single-layer LSTM returning every hidden state."""

    def __init__(self, d_in: int, hidden: int, rng=None):
        super().__init__()
        rng = _rng(rng)
        bound = 1.0 / math.sqrt(hidden)
        self.hidden = hidden
        self.w_ih = parameter(rng.uniform(-bound, bound, (d_in, 4 * hidden)))
        self.w_hh = parameter(rng.uniform(-bound, bound, (hidden, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[hidden : 2 * hidden] = 1.0  # forget-gate bias
        self.b = parameter(b)

    def forward(self, x, h0=None, c0=None):
        n = x.shape[0]
        zeros = np.zeros((n, self.hidden), dtype=x.dtype)
        h0 = h0 if h0 is not None else Tensor(zeros)
        c0 = c0 if c0 is not None else Tensor(zeros.copy())
        return T.lstm(x, h0, c0, self.w_ih, self.w_hh, self.b)


# ---------------------------------------------------------------------------
# optimisers
# ---------------------------------------------------------------------------


class SGD:
    def __init__(self, params, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            v *= self.momentum
            v += g
            p.data = (p.data - self.lr * v).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


class Adam:
    def __init__(self, params, lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        self._t += 1
        b1, b2 = self.betas
        for p, m, v in zip(self.params, self._m, self._v):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data if self.weight_decay else p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / (1 - b1**self._t)
            vhat = v / (1 - b2**self._t)
            p.data = (p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cosine_lr(step: int, total: int, lr_max: float, lr_min: float = 0.0) -> float:
    if total <= 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1 + math.cos(math.pi * step / total))


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm
