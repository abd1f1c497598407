"""Grayscale mathematical morphology on 2-D float images.

Images are plain 2-D numpy arrays; the input dtype is preserved so that the
float32 pseudo-morphological layers can be compared bit-for-bit against these
operators.

Out-of-bounds samples read the neutral element of the extremum (+inf for
erosion, -inf for dilation) unless a finite ``border`` value is given.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StructuringElement:
    """Finite offset set with one additive weight per offset (all zero = flat)."""

    offsets: tuple[tuple[int, int], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        offsets = tuple((int(i), int(j)) for i, j in self.offsets)
        weights = tuple(float(w) for w in self.weights)
        if not offsets:
            raise ValueError("structuring element must contain at least one offset")
        if len(set(offsets)) != len(offsets):
            raise ValueError("structuring element offsets must be unique")
        if len(weights) != len(offsets):
            raise ValueError(f"{len(weights)} weights for {len(offsets)} offsets")
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def flat(cls, offsets) -> "StructuringElement":
        offsets = tuple(offsets)
        return cls(offsets, (0.0,) * len(offsets))

    @classmethod
    def from_mask(cls, mask: np.ndarray, weights: np.ndarray | None = None) -> "StructuringElement":
        """Build an SE from a boolean mask centred at ``(h // 2, w // 2)``."""
        mask = np.asarray(mask, dtype=bool)
        ci, cj = mask.shape[0] // 2, mask.shape[1] // 2
        rows, cols = np.nonzero(mask)
        offsets = tuple(zip((rows - ci).tolist(), (cols - cj).tolist()))
        w = (0.0,) * len(offsets) if weights is None else tuple(np.asarray(weights)[rows, cols])
        return cls(offsets, w)

    @property
    def is_flat(self) -> bool:
        return all(w == 0 for w in self.weights)

    @property
    def origin_included(self) -> bool:
        return (0, 0) in self.offsets

    @property
    def radius(self) -> int:
        return max(max(abs(i), abs(j)) for i, j in self.offsets)

    def reflect(self) -> "StructuringElement":
        return StructuringElement(tuple((-i, -j) for i, j in self.offsets), self.weights)


def square(k: int) -> StructuringElement:
    """(2k+1) x (2k+1) square; ``square(0)`` is the single origin point."""
    return StructuringElement.flat((i, j) for i in range(-k, k + 1) for j in range(-k, k + 1))


def cross(k: int = 1) -> StructuringElement:
    offs = {(0, 0)}
    for d in range(1, k + 1):
        offs |= {(d, 0), (-d, 0), (0, d), (0, -d)}
    return StructuringElement.flat(sorted(offs))


def disk(k: int) -> StructuringElement:
    """Euclidean ball of radius ``k``."""
    return StructuringElement.flat(
        (i, j) for i in range(-k, k + 1) for j in range(-k, k + 1) if i * i + j * j <= k * k
    )


def parse_se(spec: str) -> StructuringElement:
    """Parse ``disk:k``, ``square:k`` or ``cross:k``."""
    try:
        kind, arg = spec.split(":")
        k = int(arg)
    except ValueError as exc:
        raise ValueError(f"bad structuring element {spec!r}; expected e.g. disk:3") from exc
    if k < 0:
        raise ValueError(f"structuring element size must be >= 0, got {k}")
    builders = {"disk": disk, "square": square, "cross": cross}
    if kind not in builders:
        raise ValueError(f"unknown structuring element kind {kind!r}")
    return builders[kind](k)


def _check(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {f.shape}")
    if not np.issubdtype(f.dtype, np.floating):
        f = f.astype(np.float32)
    return f


def _extremum(f, se, sign: int, border) -> np.ndarray:
    # sign=+1: dilation, max f[n - d] + w ; sign=-1: erosion, min f[n + d] - w
    f = _check(f)
    if border is None:
        border = -np.inf if sign > 0 else np.inf
    p = se.radius
    h, w = f.shape
    fp = np.pad(f, p, constant_values=border)
    acc = np.full_like(f, -np.inf if sign > 0 else np.inf)
    reduce = np.maximum if sign > 0 else np.minimum
    for (di, dj), wt in zip(se.offsets, se.weights):
        si, sj = (-di, -dj) if sign > 0 else (di, dj)
        shifted = fp[p + si : p + si + h, p + sj : p + sj + w]
        if wt != 0:
            shifted = shifted + f.dtype.type(wt) if sign > 0 else shifted - f.dtype.type(wt)
        reduce(acc, shifted, out=acc)
    return acc


def erode(f: np.ndarray, se: StructuringElement, border: float | None = None) -> np.ndarray:
    """``min_{d in se} f[n + d] - b[d]``."""
    return _extremum(f, se, -1, border)


def dilate(f: np.ndarray, se: StructuringElement, border: float | None = None) -> np.ndarray:
    """``max_{d in se} f[n - d] + b[d]``."""
    return _extremum(f, se, +1, border)


def opening(f, se, border=None):
    return dilate(erode(f, se, border), se, border)


def closing(f, se, border=None):
    return erode(dilate(f, se, border), se, border)


def external_gradient(f, se, border=None):
    return dilate(f, se, border) - _check(f)


def internal_gradient(f, se, border=None):
    return _check(f) - erode(f, se, border)


def morphological_gradient(f, se, border=None):
    return dilate(f, se, border) - erode(f, se, border)


def gradients(f, se, border=None) -> dict[str, np.ndarray]:
    """External, internal and full (Beucher) gradients keyed ``G_e``, ``G_i``, ``G_b``."""
    f = _check(f)
    d = dilate(f, se, border)
    e = erode(f, se, border)
    return {"G_e": d - f, "G_i": f - e, "G_b": d - e}


OPERATORS = {
    "erode": erode,
    "dilate": dilate,
    "open": opening,
    "close": closing,
    "grad-e": external_gradient,
    "grad-i": internal_gradient,
    "grad-m": morphological_gradient,
}


def apply(op: str, f: np.ndarray, se: StructuringElement) -> np.ndarray:
    if op not in OPERATORS:
        raise ValueError(f"unknown operator {op!r}; choose from {', '.join(OPERATORS)}")
    return OPERATORS[op](f, se)
