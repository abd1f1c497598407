"""Trainable pseudo-morphological layers.

Every variant runs the same pipeline::

    batch norm -> projection conv (C -> C*f*f) -> pixel shuffle (f) -> extremum pool (r, stride r)

with ``f = r`` (``f = r*s`` for upsampling). After the shuffle each input
pixel owns an f x f block holding its f*f projected channels, so the pool
takes an extremum over projected channels. The projection bias is added
before the extremum and therefore acts as the structuring element weights.

With a k x k projection kernel (default ``k = r``) a one-hot projection copies
each neighbour of the k x k window into its own channel, and the layer
collapses onto a classical weighted dilation/erosion of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from . import nn
from . import tensor as T
from .tensor import ShapeError, Tensor

VARIANTS = ("dilation", "erosion", "pooling", "upsampling", "gradient")


@dataclass(frozen=True)
class PseudoLayerConfig:
    variant: str
    c_in: int
    r: int = 3
    s: int = 1
    c_out: int | None = None
    proj_kernel: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.r < 1 or self.c_in < 1:
            raise ValueError("r and c_in must be positive")
        if self.variant == "upsampling":
            if self.s < 2:
                raise ValueError("pseudo upsampling needs s >= 2; use the dilation variant for s = 1")
        elif self.s != 1:
            raise ValueError(f"s is only meaningful for upsampling, got s={self.s}")
        if self.variant == "gradient" and self.out_channels != self.c_in:
            raise ShapeError("pseudo gradient subtracts its input, so c_out must equal c_in")

    @property
    def out_channels(self) -> int:
        return self.c_in if self.c_out is None else self.c_out

    @property
    def factor(self) -> int:
        """Pixel-shuffle factor."""
        return self.r * self.s

    @property
    def kernel(self) -> int:
        return self.r if self.proj_kernel is None else self.proj_kernel

    @property
    def proj_channels(self) -> int:
        return self.c_in * self.factor**2


def same_padding(k: int) -> tuple[int, int, int, int]:
    top = (k - 1) // 2
    bottom = k - 1 - top
    return top, bottom, top, bottom


class PseudoMorphLayer(nn.Module):
    def __init__(self, cfg: PseudoLayerConfig, rng: np.random.Generator | None = None):
        super().__init__()
        self.cfg = cfg
        self.bn = nn.BatchNorm2d(cfg.c_in)
        self.proj = nn.Conv2d(
            cfg.c_in, cfg.proj_channels, cfg.kernel, padding=same_padding(cfg.kernel), rng=rng
        )
        # optional extension: channel change after the morphological stage
        self.out_proj = (
            nn.Conv2d(cfg.c_in, cfg.out_channels, 1, rng=rng) if cfg.out_channels != cfg.c_in else None
        )

    def extremum(self, x: Tensor, mode: str) -> Tensor:
        """BN -> projection -> shuffle -> r x r extremum pool with stride r."""
        cfg = self.cfg
        channels = x.shape[-3]
        if channels != cfg.c_in:
            raise ShapeError(f"pseudo-{cfg.variant}: expected {cfg.c_in} channels, got {channels}")
        g = self.proj(self.bn(x))
        h = T.pixel_shuffle(g, cfg.factor)
        return T.pool2d(h, mode, cfg.r, cfg.r)

    def forward(self, x: Tensor) -> Tensor:
        v = self.cfg.variant
        if v == "pooling" and (x.shape[-1] % 2 or x.shape[-2] % 2):
            raise ShapeError(f"pseudo pooling needs even spatial dims, got {x.shape[-2:]}")
        y = self.extremum(x, "min" if v == "erosion" else "max")
        if v == "pooling":
            y = T.pool2d(y, "max", 2, 2)
        elif v == "gradient":
            y = y - x
        if self.out_proj is not None:
            y = self.out_proj(y)
        return y

    # -- oracle helpers ----------------------------------------------------------
    def set_one_hot_projection(self, biases=None) -> None:
        """Freeze BN to identity and make the projection copy neighbours one-hot.

        Projected channel ``c*f*f + u*f + v`` copies input channel ``c`` at the
        kernel offset ``(u mod r, v mod r)``; ``biases`` (length f*f) becomes the
        per-channel bias for every input channel.
        """
        cfg = self.cfg
        f, k = cfg.factor, cfg.kernel
        self.bn.freeze_identity()
        top = (k - 1) // 2
        w = np.zeros_like(self.proj.weight.data)
        for c in range(cfg.c_in):
            for u in range(f):
                for v in range(f):
                    a, b = (u % cfg.r, v % cfg.r) if k == cfg.r else (top, top)
                    w[c * f * f + u * f + v, c, a, b] = 1
        self.proj.weight.data = w
        b = np.zeros(f * f) if biases is None else np.asarray(biases, dtype=np.float64)
        self.proj.bias.data = np.tile(b, cfg.c_in).astype(self.proj.bias.dtype)

    def kernel_offsets(self) -> list[tuple[int, int]]:
        """Spatial offset read by each one-hot channel ``u*f + v`` (row-major)."""
        cfg = self.cfg
        top = (cfg.kernel - 1) // 2
        f = cfg.factor
        if cfg.kernel != cfg.r:
            return [(0, 0)] * (f * f)
        return [((u % cfg.r) - top, (v % cfg.r) - top) for u in range(f) for v in range(f)]

    # -- persistence ---------------------------------------------------------------
    def save(self, directory) -> None:
        cfg = self.cfg
        manifest = {
            "kind": "pseudo-layer",
            "variant": cfg.variant,
            "r": cfg.r,
            "s": cfg.s,
            "c_in": cfg.c_in,
            "c_out": cfg.out_channels,
            "proj_kernel": cfg.kernel,
        }
        io.save_checkpoint(directory, self.state_dict(), manifest)

    @classmethod
    def load(cls, directory: str | Path) -> "PseudoMorphLayer":
        state, manifest = io.load_checkpoint(directory)
        cfg = PseudoLayerConfig(
            variant=manifest["variant"],
            c_in=int(manifest["c_in"]),
            r=int(manifest["r"]),
            s=int(manifest["s"]),
            c_out=int(manifest["c_out"]),
            proj_kernel=int(manifest["proj_kernel"]),
        )
        layer = cls(cfg)
        layer.load_state_dict(state)
        return layer


def make_layer(variant: str, c_in: int, r: int = 3, s: int = 1, rng=None, **kw) -> PseudoMorphLayer:
    if variant == "upsampling" and s == 1:
        s = 2
    return PseudoMorphLayer(PseudoLayerConfig(variant, c_in, r, s, **kw), rng=rng)


def _run(variant: str, x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    if layer.cfg.variant != variant:
        raise ValueError(f"layer is configured as {layer.cfg.variant!r}, not {variant!r}")
    return layer(x)


def pseudo_dilation(x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    return _run("dilation", x, layer)


def pseudo_erosion(x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    return _run("erosion", x, layer)


def pseudo_pooling(x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    return _run("pooling", x, layer)


def pseudo_upsampling(x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    return _run("upsampling", x, layer)


def pseudo_gradient(x: Tensor, layer: PseudoMorphLayer) -> Tensor:
    return _run("gradient", x, layer)
