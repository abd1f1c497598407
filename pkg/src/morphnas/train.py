"""SGD training loops for classification and edge detection."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 2
    lr: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 3e-4
    batch_size: int = 32
    cutout: int = 0  # side of the random erase square, 0 = off
    seed: int = 0


@dataclass
class TrainResult:
    train_loss: list[float] = field(default_factory=list)
    train_error: list[float] = field(default_factory=list)
    val_error: list[float] = field(default_factory=list)


def cutout(x: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
    """Zero one random ``side`` x ``side`` square per image (clipped at borders)."""
    out = x.copy()
    h, w = x.shape[-2:]
    for img in out:
        cy, cx = rng.integers(0, h), rng.integers(0, w)
        y0, y1 = max(cy - side // 2, 0), min(cy + side - side // 2, h)
        x0, x1 = max(cx - side // 2, 0), min(cx + side - side // 2, w)
        img[:, y0:y1, x0:x1] = 0
    return out


def predict_logits(net: nn.Module, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    net.eval()
    out = []
    with T.no_grad():
        for i in range(0, len(x), batch_size):
            out.append(net(Tensor(x[i : i + batch_size])).data)
    return np.concatenate(out) if out else np.zeros((0,))


def classification_error(net: nn.Module, x: np.ndarray, y: np.ndarray, batch_size: int = 64) -> float:
    if len(x) == 0:
        raise ValueError("cannot evaluate on an empty split")
    return float(np.mean(predict_logits(net, x, batch_size).argmax(axis=1) != y))


def _run_epochs(net, x, loss_fn, cfg: TrainConfig, on_epoch=None) -> list[float]:
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    opt = nn.SGD(params, cfg.lr, cfg.momentum, cfg.weight_decay)
    steps_per_epoch = max(1, -(-len(x) // cfg.batch_size))
    total = cfg.epochs * steps_per_epoch
    losses = []
    step = 0
    for epoch in range(cfg.epochs):
        net.train()
        order = rng.permutation(len(x))
        running = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2 and len(x) >= 2:
                continue  # batch norm needs more than one sample
            opt.lr = nn.cosine_lr(step, total, cfg.lr, cfg.lr_min)
            opt.zero_grad()
            loss = loss_fn(idx, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(epoch, value)
            loss.backward()
            opt.step()
            running += value * len(idx)
            step += 1
        losses.append(running / len(x))
        if on_epoch is not None:
            on_epoch(epoch)
    return losses


def train_classifier(net: nn.Module, x, y, x_val=None, y_val=None, cfg: TrainConfig | None = None) -> TrainResult:
    """Cross-entropy SGD with momentum and a cosine learning rate.

    ``epochs = 0`` leaves the network untouched.
    """
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y, dtype=np.int64)
    res = TrainResult()

    def loss_fn(idx, rng):
        xb = x[idx]
        if cfg.cutout:
            xb = cutout(xb, cfg.cutout, rng)
        return T.cross_entropy(net(Tensor(xb)), y[idx])

    def on_epoch(epoch):
        res.train_error.append(classification_error(net, x, y))
        if x_val is not None:
            res.val_error.append(classification_error(net, x_val, y_val))
        log.debug("epoch %d loss %.4f val_error %s", epoch, res.train_loss[-1] if res.train_loss else float("nan"),
                  res.val_error[-1] if res.val_error else None)

    res.train_loss = _run_epochs(net, x, loss_fn, cfg, on_epoch)
    return res


def edge_target(gts: list[np.ndarray]) -> np.ndarray:
    """Training target: pixels marked by at least half of the annotators."""
    stack = np.stack([np.asarray(g, dtype=np.float32) > 0 for g in gts])
    return (stack.mean(axis=0) >= 0.5).astype(np.float32)


def train_edge(net: nn.Module, x, gts, cfg: TrainConfig | None = None) -> list[float]:
    """Class-balanced binary cross-entropy on single-channel edge logits."""
    cfg = cfg or TrainConfig()
    x = np.asarray(x, dtype=np.float32)
    target = np.stack([edge_target(g) for g in gts])[:, None]
    pos = float(target.mean())
    pos_weight = (1 - pos) / pos if pos > 0 else 1.0

    def loss_fn(idx, rng):
        return T.bce_with_logits(net(Tensor(x[idx])), target[idx], pos_weight)

    return _run_epochs(net, x, loss_fn, cfg)


def predict_edges(net: nn.Module, x: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Edge probabilities (N, H, W) in [0, 1]."""
    logits = predict_logits(net, np.asarray(x, dtype=np.float32), batch_size)
    return T._sigmoid_np(logits[:, 0])
