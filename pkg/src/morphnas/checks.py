"""Numerical verification: finite-difference gradient checks and the
classical-morphology collapse of the pseudo layers.

Used by the test-suite and by ``morph layer-check``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import morphology as M
from . import tensor as T
from .pseudo import PseudoLayerConfig, PseudoMorphLayer
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    step: float = 1e-3,
    rng: np.random.Generator | None = None,
    max_entries: int | None = None,
) -> list[float]:
    """Compare analytic gradients with central differences.

    ``fn`` maps the (float64) inputs to a tensor ``y``; the scalar checked is
    ``sum(y * R)`` for a fixed random ``R``. Returns one norm-wise relative
    error ``|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)`` per
    input. ``max_entries`` caps how many coordinates are perturbed per input.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
    y = fn(*inputs)
    weights = rng.standard_normal(y.shape)
    (y * Tensor(weights.astype(y.dtype))).sum().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def objective() -> float:
        with T.no_grad():
            return float((fn(*inputs).data * weights).sum())

    errors = []
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.zeros(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            num[n] = (up - down) / (2 * step)
        a = ga.reshape(-1)[idx]
        scale = max(np.linalg.norm(a), np.linalg.norm(num))
        errors.append(0.0 if scale == 0 else float(np.linalg.norm(a - num) / scale))
    return errors


def window_gap(arr: np.ndarray, k: int, stride: int, mode: str) -> float:
    """Smallest gap between the extremum and the runner-up over all windows."""
    from numpy.lib.stride_tricks import sliding_window_view

    a = arr if arr.ndim == 4 else arr[None]
    win = sliding_window_view(a, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    flat = win.reshape(*win.shape[:4], k * k)
    if k * k == 1:
        return np.inf
    s = np.sort(flat, axis=-1)
    gap = s[..., -1] - s[..., -2] if mode == "max" else s[..., 1] - s[..., 0]
    return float(gap.min())


# ---------------------------------------------------------------------------
# oracle collapse
# ---------------------------------------------------------------------------


def classical_counterpart(layer: PseudoMorphLayer, image: np.ndarray, biases=None) -> np.ndarray:
    """Classical morphology result that a one-hot, BN-frozen layer must equal.

    ``image`` is a 2-D map (single input channel). The projection zero-pads,
    so the classical operators are run with a zero border.
    """
    cfg = layer.cfg
    if cfg.kernel != cfg.r:
        raise ValueError("oracle collapse needs an r x r projection kernel")
    f = np.asarray(image)
    offsets = layer.kernel_offsets()
    b = np.zeros(len(offsets)) if biases is None else np.asarray(biases, dtype=np.float64)
    if cfg.variant == "upsampling":
        if np.any(b):
            raise ValueError("upsampling collapse is defined for zero biases")
        se = M.StructuringElement.flat({(-i, -j) for i, j in offsets})
        return np.repeat(np.repeat(M.dilate(f, se, border=0.0), cfg.s, 0), cfg.s, 1)
    if cfg.variant == "erosion":
        se = M.StructuringElement(tuple(offsets), tuple(-b))
        return M.erode(f, se, border=0.0)
    se = M.StructuringElement(tuple((-i, -j) for i, j in offsets), tuple(b))
    d = M.dilate(f, se, border=0.0)
    if cfg.variant == "pooling":
        h, w = d.shape
        return d.reshape(h // 2, 2, w // 2, 2).max(axis=(1, 3))
    if cfg.variant == "gradient":
        return d - f
    return d


def quantized_image(rng: np.random.Generator, shape=(8, 8)) -> np.ndarray:
    """Random image with exactly representable float32 values (multiples of 1/256)."""
    return (rng.integers(0, 256, size=shape) / 256.0).astype(np.float32)


def oracle_collapse(variant: str, n_images: int = 100, seed: int = 0, r: int = 2, s: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    cfg = PseudoLayerConfig(variant, 1, r=r, s=s if variant == "upsampling" else 1)
    layer = PseudoMorphLayer(cfg, rng=rng)
    biases = None if variant == "upsampling" else rng.integers(-4, 5, size=cfg.factor**2).astype(np.float64)
    layer.set_one_hot_projection(biases)
    layer.eval()
    mismatches = 0
    with T.no_grad():
        for _ in range(n_images):
            img = quantized_image(rng)
            out = layer(Tensor(img[None, None])).data[0, 0]
            ref = classical_counterpart(layer, img, biases)
            if out.dtype != ref.dtype or out.shape != ref.shape or not np.array_equal(out, ref):
                mismatches += 1
    return CheckResult(
        "oracle-collapse", mismatches == 0, f"{n_images - mismatches}/{n_images} images bit-identical"
    )


def _generic_layer_point(variant: str, rng: np.random.Generator, c: int = 2, hw: int = 4, r: int = 2):
    """Random float64 layer and input whose pooling windows have clear winners."""
    for _ in range(200):
        cfg = PseudoLayerConfig(variant, c, r=r, s=2 if variant == "upsampling" else 1)
        layer = PseudoMorphLayer(cfg, rng=rng).to(np.float64)
        layer.bn.gamma.data = rng.uniform(0.5, 1.5, c)
        layer.bn.beta.data = rng.normal(0, 0.5, c)
        layer.proj.bias.data = rng.normal(0, 2.0, cfg.proj_channels)
        x = rng.standard_normal((2, c, hw, hw))
        with T.no_grad():
            h = T.pixel_shuffle(layer.proj(layer.bn(Tensor(x))), cfg.factor).data
            mode = "min" if variant == "erosion" else "max"
            gap = window_gap(h, cfg.r, cfg.r, mode)
            if variant == "pooling":
                y = T.pool2d(Tensor(h), "max", cfg.r, cfg.r).data
                gap = min(gap, window_gap(y, 2, 2, "max"))
        if gap > 0.02:
            return layer, x
    raise RuntimeError("could not find a tie-free sample point")


def layer_gradcheck(variant: str, points: int = 20, seed: int = 0, tol: float = 1e-4) -> CheckResult:
    """Finite-difference check of input, projection weight/bias and BN scale/shift."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(points):
        layer, x = _generic_layer_point(variant, rng)
        layer.train()
        xt = Tensor(x, requires_grad=True)
        params = [layer.proj.weight, layer.proj.bias, layer.bn.gamma, layer.bn.beta]

        def fn(xv, *_):
            return layer(xv)

        errs = gradcheck(fn, [xt, *params], rng=rng, max_entries=24)
        worst = max(worst, *errs)
    return CheckResult("gradient-check", worst <= tol, f"max rel err {worst:.2e} over {points} points (tol {tol:g})")


def shape_contract(variant: str) -> CheckResult:
    cfg = PseudoLayerConfig(variant, 3, r=3, s=2 if variant == "upsampling" else 1)
    layer = PseudoMorphLayer(cfg)
    with T.no_grad():
        y = layer(Tensor(np.zeros((3, 8, 8), dtype=np.float32)))
    expected = {"pooling": (3, 4, 4), "upsampling": (3, 16, 16)}.get(variant, (3, 8, 8))
    return CheckResult("shape-contract", y.shape == expected, f"(3,8,8) -> {y.shape}")


def pool_stage_bound(variant: str, seed: int = 0) -> CheckResult:
    """Each pooled value bounds every element of its window (>= for max, <= for min)."""
    rng = np.random.default_rng(seed)
    cfg = PseudoLayerConfig(variant, 2, r=3, s=2 if variant == "upsampling" else 1)
    layer = PseudoMorphLayer(cfg, rng=rng).eval()
    mode = "min" if variant == "erosion" else "max"
    ok = True
    with T.no_grad():
        for _ in range(20):
            x = Tensor(rng.standard_normal((2, 6, 6)).astype(np.float32))
            h = T.pixel_shuffle(layer.proj(layer.bn(x)), cfg.factor).data
            pooled = layer.extremum(x, mode).data
            up = np.repeat(np.repeat(pooled, cfg.r, -2), cfg.r, -1)
            ok &= bool(np.all(up >= h) if mode == "max" else np.all(up <= h))
    return CheckResult("pool-stage-bound", ok, f"{mode}-pool output bounds its window")


def determinism(variant: str, seed: int = 0) -> CheckResult:
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(seed)
        cfg = PseudoLayerConfig(variant, 2, r=3, s=2 if variant == "upsampling" else 1)
        layer = PseudoMorphLayer(cfg, rng=rng)
        x = Tensor(rng.standard_normal((2, 2, 6, 6)).astype(np.float32))
        outs.append(layer(x).data)
    return CheckResult("determinism", np.array_equal(outs[0], outs[1]), "same seed -> identical output")


def layer_check(variant: str, seed: int = 0, tol: float = 1e-4, points: int = 20) -> list[CheckResult]:
    return [
        shape_contract(variant),
        oracle_collapse(variant, seed=seed),
        pool_stage_bound(variant, seed=seed),
        layer_gradcheck(variant, points=points, seed=seed, tol=tol),
        determinism(variant, seed=seed),
    ]
