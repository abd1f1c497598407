"""Seeded synthetic datasets and the optional CIFAR-10 binary reader."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import morphology as M

SHAPES = ("disk", "square", "triangle", "cross")


def shape_mask(kind: str, size: int, cy: float, cx: float, radius: float) -> np.ndarray:
    """Boolean mask of a filled shape centred at (cy, cx)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "disk":
        return dy * dy + dx * dx <= radius * radius
    if kind == "square":
        return (np.abs(dy) <= radius * 0.85) & (np.abs(dx) <= radius * 0.85)
    if kind == "triangle":
        # apex up; base at cy + r/2
        top, base = cy - radius, cy + 0.6 * radius
        half = (yy - top) / (base - top) * radius
        return (yy >= top) & (yy <= base) & (np.abs(dx) <= half)
    if kind == "cross":
        arm = max(radius / 3.0, 1.0)
        return ((np.abs(dy) <= arm) & (np.abs(dx) <= radius)) | ((np.abs(dx) <= arm) & (np.abs(dy) <= radius))
    raise ValueError(f"unknown shape {kind!r}")


@dataclass
class Split:
    x: np.ndarray
    y: np.ndarray | None = None
    gts: list[list[np.ndarray]] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.x)


@dataclass
class Dataset:
    name: str
    train: Split
    val: Split
    test: Split
    num_classes: int = 0


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


def _cls_images(n: int, rng: np.random.Generator, size: int, classes: int, noise: float):
    x = np.empty((n, 3, size, size), dtype=np.float32)
    y = rng.integers(0, classes, size=n)
    for i in range(n):
        radius = rng.uniform(0.25, 0.4) * size
        cy, cx = rng.uniform(radius * 0.8, size - radius * 0.8, size=2)
        mask = shape_mask(SHAPES[y[i]], size, cy, cx, radius)
        bg = rng.uniform(0.0, 0.4, size=3)
        fg = rng.uniform(0.6, 1.0, size=3)
        img = np.where(mask[None], fg[:, None, None], bg[:, None, None])
        x[i] = img + rng.normal(0, noise, img.shape)
    return x, y.astype(np.int64)


def synth_shapes_cls(
    seed: int = 0, n_train: int = 512, n_val: int = 256, n_test: int = 256,
    size: int = 16, classes: int = 4, noise: float = 0.05,
) -> Dataset:
    """Shape classification: one filled disk/square/triangle/cross per 3 x size x size image."""
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in [2, {len(SHAPES)}]")
    rng = np.random.default_rng(seed)
    splits = [Split(*_cls_images(n, rng, size, classes, noise)) for n in (n_train, n_val, n_test)]
    return Dataset("synth-shapes-cls", *splits, num_classes=classes)


# ---------------------------------------------------------------------------
# edges
# ---------------------------------------------------------------------------


def label_boundary(labels: np.ndarray) -> np.ndarray:
    """Pixels where the 3x3 morphological gradient of the label map is positive."""
    lab = labels.astype(np.float32)
    se = M.square(1)
    return M.morphological_gradient(lab, se, border=None) > 0


def _edge_image(rng: np.random.Generator, size: int, n_shapes: int, noise: float, annotators: int):
    labels = np.zeros((size, size), dtype=np.int64)
    for k in range(1, n_shapes + 1):
        kind = SHAPES[rng.integers(len(SHAPES))]
        radius = rng.uniform(0.15, 0.3) * size
        cy, cx = rng.uniform(radius, size - radius, size=2)
        labels[shape_mask(kind, size, cy, cx, radius)] = k
    present = np.unique(labels)
    # region intensities on a grid with spacing >= 0.15 so every label change is visible
    levels = np.round(np.linspace(0.1, 0.9, 6), 4)
    gray = rng.permutation(levels)[: len(present)]
    img = np.zeros((size, size), dtype=np.float64)
    for lab, g in zip(present, gray):
        img[labels == lab] = g
    x = np.repeat(img[None], 3, axis=0) + rng.normal(0, noise, (3, size, size))
    full = label_boundary(labels)
    gts = [full]
    shapes = [int(v) for v in present if v != 0]
    for a in range(1, annotators):
        if not shapes:
            gts.append(full.copy())
            continue
        drop = shapes[(a - 1) % len(shapes)]
        kept = np.where(labels == drop, 0, labels)
        gts.append(full & label_boundary(kept))
    return x.astype(np.float32), [g.astype(np.uint8) for g in gts]


def synth_shapes_edge(
    seed: int = 0, n_train: int = 64, n_val: int = 16, n_test: int = 32,
    size: int = 64, max_shapes: int = 3, noise: float = 0.02, annotators: int = 3,
) -> Dataset:
    """Piecewise-constant shape images whose edge maps are exact label-map gradients.

    The first annotator marks every boundary; each further annotator omits
    the boundary of one shape, mimicking disagreeing human labels.
    """
    rng = np.random.default_rng(seed)
    splits = []
    offset = 0
    for n in (n_train, n_val, n_test):
        xs, gts = [], []
        for _ in range(n):
            x, g = _edge_image(rng, size, int(rng.integers(1, max_shapes + 1)), noise, annotators)
            xs.append(x)
            gts.append(g)
        ids = [f"img{offset + i:04d}" for i in range(n)]
        offset += n
        splits.append(Split(np.stack(xs) if xs else np.zeros((0, 3, size, size), np.float32), None, gts, ids))
    return Dataset("synth-shapes-edge", *splits)


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------

CIFAR_RECORD = 3073


def read_cifar_batch(path) -> tuple[np.ndarray, np.ndarray]:
    """Read one CIFAR-10 binary batch: records of 1 label byte + 3072 pixel bytes."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD}")
    rec = raw.reshape(-1, CIFAR_RECORD)
    y = rec[:, 0].astype(np.int64)
    if y.max(initial=0) > 9:
        raise ValueError(f"{path}: label byte out of range")
    x = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return x, y


def cifar10(directory, n_val: int = 5000) -> Dataset:
    d = Path(directory)
    train = [read_cifar_batch(d / f"data_batch_{i}.bin") for i in range(1, 6) if (d / f"data_batch_{i}.bin").exists()]
    if not train:
        raise FileNotFoundError(f"{d}: no data_batch_*.bin files")
    x = np.concatenate([t[0] for t in train])
    y = np.concatenate([t[1] for t in train])
    xt, yt = read_cifar_batch(d / "test_batch.bin")
    return Dataset("cifar10-binary", Split(x[:-n_val], y[:-n_val]), Split(x[-n_val:], y[-n_val:]), Split(xt, yt), 10)


def load_dataset(name: str, seed: int = 0, data_dir=None, **kw) -> Dataset:
    if name == "synth-shapes-cls":
        return synth_shapes_cls(seed, **kw)
    if name == "synth-shapes-edge":
        return synth_shapes_edge(seed, **kw)
    if name == "cifar10-binary":
        if data_dir is None:
            raise ValueError("cifar10-binary needs a data directory")
        return cifar10(data_dir)
    raise ValueError(f"unknown dataset {name!r}")
