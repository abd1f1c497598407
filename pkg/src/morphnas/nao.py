"""Encoder / predictor / decoder surrogate over architecture token sequences.

The encoder embeds a token sequence, runs an LSTM and averages the hidden
states into a latent vector ``e``. The predictor maps ``e`` to a score in
[0, 1]. The decoder is an LSTM started from ``h0 = e`` that reads the
previous token concatenated with ``e`` and emits one token distribution per
position; logits are masked so each position only proposes tokens of the
right class (predecessor or operation of that cell's space).

New candidates come from gradient ascent on the predictor in latent space
followed by greedy decoding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from . import tensor as T
from .cells import Architecture, alphabet_size, encode_cell, get_space, random_cell
from .tensor import Tensor

log = logging.getLogger(__name__)


class NaoDivergence(RuntimeError):
    pass


@dataclass(frozen=True)
class ArchCodec:
    """Token layout of an architecture: one block of ``4 B`` tokens per cell."""

    B: int
    spaces: tuple[str, ...]
    kinds: tuple[str, ...]

    def __post_init__(self):
        if len(self.spaces) != len(self.kinds) or not self.spaces:
            raise ValueError("codec needs one space per cell kind")

    @property
    def length(self) -> int:
        return 4 * self.B * len(self.spaces)

    @property
    def vocab(self) -> int:
        return max(alphabet_size(self.B, s) for s in self.spaces)

    def mask(self) -> np.ndarray:
        """(length, vocab) additive logit mask: 0 where allowed, -1e9 elsewhere."""
        m = np.full((self.length, self.vocab), -1e9, dtype=np.float32)
        base = self.B + 1
        for k, sp in enumerate(self.spaces):
            n_ops = len(get_space(sp).ops)
            for j in range(4 * self.B):
                row = m[4 * self.B * k + j]
                if j % 2 == 0:
                    row[:base] = 0
                else:
                    row[base : base + n_ops] = 0
        return m

    def encode(self, arch: Architecture) -> list[int]:
        return arch.tokens()

    def decode(self, tokens: Sequence[int]) -> Architecture:
        return Architecture.from_tokens(tokens, self.B, self.spaces, self.kinds)

    def is_valid(self, tokens: Sequence[int]) -> bool:
        try:
            self.decode(tokens)
        except ValueError:
            return False
        return True


@dataclass
class NaoConfig:
    d: int = 64
    emb: int = 32
    epochs: int = 1000
    lr: float = 1e-2
    lr_min: float = 1e-4
    batch_size: int | None = None  # None = full batch
    clip: float | None = None
    lam: float = 0.8
    eta: float = 0.01
    steps: int = 10
    seed: int = 0
    weight_decay: float = 0.0
    augment: int = 0


class NaoModel(nn.Module):
    def __init__(self, codec: ArchCodec, d: int = 64, emb: int = 32, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.codec = codec
        self.d = d
        v = codec.vocab
        self.sos = v  # extra start-of-sequence symbol for the decoder input
        self.enc_emb = nn.Embedding(v, emb, rng=rng)
        self.encoder = nn.LSTM(emb, d, rng=rng)
        self.pred_hidden = nn.Linear(d, d, rng=rng)
        self.pred_out = nn.Linear(d, 1, rng=rng)
        self.dec_emb = nn.Embedding(v + 1, emb, rng=rng)
        self.decoder = nn.LSTM(emb + d, d, rng=rng)
        self.dec_out = nn.Linear(d, v, rng=rng)
        self._mask = codec.mask()

    # -- components ----------------------------------------------------------------
    def encode(self, tokens: np.ndarray) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        return self.encoder(self.enc_emb(tokens)).mean(axis=1)

    def predict_latent(self, e: Tensor) -> Tensor:
        return T.sigmoid(self.pred_out(T.relu(self.pred_hidden(e)))).reshape(-1)

    def decoder_logprobs(self, e: Tensor, tokens: np.ndarray) -> Tensor:
        """Teacher-forced log-probabilities, shape (N, L, vocab)."""
        tokens = np.asarray(tokens, dtype=np.int64)
        n, length = tokens.shape
        prev = np.concatenate([np.full((n, 1), self.sos), tokens[:, :-1]], axis=1)
        e_rep = e.reshape(n, 1, self.d) + Tensor(np.zeros((n, length, self.d), dtype=e.dtype))
        x = T.concat([self.dec_emb(prev), e_rep], axis=2)
        h = self.decoder(x, h0=e)
        logits = self.dec_out(h) + Tensor(self._mask)
        return T.log_softmax(logits, axis=-1)

    def greedy_decode(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=np.float32)
        n = e.shape[0]
        h, c = e.copy(), np.zeros_like(e)
        prev = np.full(n, self.sos)
        out = np.zeros((n, self.codec.length), dtype=np.int64)
        lstm = self.decoder
        for t in range(self.codec.length):
            x = np.concatenate([self.dec_emb.weight.data[prev], e], axis=1)
            h, c, _ = T.lstm_step(x, h, c, lstm.w_ih.data, lstm.w_hh.data, lstm.b.data)
            logits = h @ self.dec_out.weight.data + self.dec_out.bias.data + self._mask[t]
            prev = logits.argmax(axis=1)
            out[:, t] = prev
        return out

    # -- convenience -----------------------------------------------------------------
    def latent(self, tokens) -> np.ndarray:
        with T.no_grad():
            return self.encode(np.atleast_2d(tokens)).data

    def predict(self, tokens) -> np.ndarray:
        with T.no_grad():
            return self.predict_latent(self.encode(np.atleast_2d(tokens))).data

    def reconstruct(self, tokens) -> np.ndarray:
        return self.greedy_decode(self.latent(tokens))

    def loss(self, tokens: np.ndarray, scores: np.ndarray, lam: float) -> tuple[Tensor, Tensor, Tensor]:
        tokens = np.asarray(tokens, dtype=np.int64)
        e = self.encode(tokens)
        mse = T.mse_loss(self.predict_latent(e), np.asarray(scores, dtype=np.float32))
        logp = self.decoder_logprobs(e, tokens)
        onehot = np.eye(self.codec.vocab, dtype=np.float32)[tokens]
        nll = -(logp * Tensor(onehot)).sum() * (1.0 / tokens.size)
        return mse + nll * lam, mse, nll


@dataclass
class NaoTrainResult:
    model: NaoModel
    losses: list[float] = field(default_factory=list)


def train_nao(
    tokens: Sequence[Sequence[int]],
    scores: Sequence[float],
    codec: ArchCodec,
    cfg: NaoConfig | None = None,
) -> NaoTrainResult:
    """Adam on ``MSE(P(E(x)), s) + lam * NLL(D(E(x)) = x)`` with a cosine learning rate.

    ``losses`` holds the epoch-averaged objective.
    """
    cfg = cfg or NaoConfig()
    tokens = np.asarray(tokens, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    if tokens.size == 0 or len(tokens) != len(scores):
        raise ValueError("NAO corpus must be non-empty with one score per sequence")
    if tokens.shape[1] != codec.length:
        raise ValueError(f"sequences have length {tokens.shape[1]}, codec expects {codec.length}")
    if np.any((scores < 0) | (scores > 1)) or not np.all(np.isfinite(scores)):
        raise ValueError("NAO scores must be finite and normalised to [0, 1]")
    rng = np.random.default_rng(cfg.seed)
    model = NaoModel(codec, cfg.d, cfg.emb, rng=rng)
    if cfg.augment:
        extra = [swap_inputs(tokens, rng) for _ in range(cfg.augment)]
        tokens = np.concatenate([tokens, *extra])
        scores = np.tile(scores, cfg.augment + 1)
    opt = nn.Adam(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    losses = []
    n = len(tokens)
    batch = cfg.batch_size or n
    for epoch in range(cfg.epochs):
        opt.lr = nn.cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        order = rng.permutation(n)
        total_loss = 0.0
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            opt.zero_grad()
            total, _, _ = model.loss(tokens[idx], scores[idx], cfg.lam)
            value = total.item()
            if not np.isfinite(value):
                raise NaoDivergence(f"NAO loss became non-finite at epoch {epoch}")
            total.backward()
            if cfg.clip:
                nn.clip_grad_norm(opt.params, cfg.clip)
            opt.step()
            total_loss += value * len(idx)
        losses.append(total_loss / n)
    return NaoTrainResult(model, losses)


def swap_inputs(tokens: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Randomly exchange the two (predecessor, op) pairs of each node.

    The node computes the same sum either way, so the score is unchanged.
    """
    t = np.array(tokens, dtype=np.int64)
    n, length = t.shape
    nodes = t.reshape(n, length // 4, 2, 2)
    flip = rng.random((n, length // 4)) < 0.5
    nodes[flip] = nodes[flip][:, ::-1]
    return nodes.reshape(n, length)


def op_diversity(cell) -> float:
    """Fraction of the space's operations that appear in ``cell``."""
    return len(set(cell.ops())) / len(get_space(cell.space).ops)


def synthetic_corpus(space: str, B: int, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """``n`` normal cells with min-max normalised op-diversity scores.

    Each cell first draws how many distinct operations it may use, so the
    scores spread over the whole range instead of piling up near the top.
    """
    ops = get_space(space).ops
    cells = []
    for _ in range(n):
        k = int(rng.integers(1, len(ops) + 1))
        subset = [ops[i] for i in rng.choice(len(ops), k, replace=False)]
        cells.append(random_cell(space, B, rng, ops=subset))
    scores = np.array([op_diversity(c) for c in cells])
    lo, hi = scores.min(), scores.max()
    scores = (scores - lo) / (hi - lo) if hi > lo else np.full(n, 0.5)
    return np.array([encode_cell(c) for c in cells], dtype=np.int64), scores


def token_accuracy(model: NaoModel, tokens) -> float:
    tokens = np.asarray(tokens, dtype=np.int64)
    return float((model.reconstruct(tokens) == tokens).mean())


@dataclass
class Generation:
    candidates: list[list[int]]
    seeds_used: list[int]
    p_before: np.ndarray
    p_after: np.ndarray
    n_invalid: int
    status: str = "ok"
    decoded: np.ndarray | None = None

    @property
    def improved_fraction(self) -> float:
        if len(self.p_before) == 0:
            return 0.0
        return float(np.mean(self.p_after > self.p_before))


def ascend(model: NaoModel, e: np.ndarray, eta: float, steps: int) -> np.ndarray:
    """``steps`` updates of ``e <- e + eta * dP/de``."""
    e = np.array(e, dtype=np.float32)
    for _ in range(steps):
        et = Tensor(e, requires_grad=True)
        model.predict_latent(et).sum().backward()
        e = e + eta * et.grad
    return e


def generate_candidates(
    model: NaoModel,
    seeds: Sequence[Sequence[int]],
    eta: float = 0.01,
    steps: int = 10,
    k: int | None = None,
) -> Generation:
    """Move each seed's latent uphill on the predictor and decode greedily.

    Returns up to ``k`` distinct valid sequences in seed order; invalid
    decodes are dropped and counted.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    e0 = model.latent(seeds)
    e1 = ascend(model, e0, eta, steps)
    with T.no_grad():
        p0 = model.predict_latent(Tensor(e0)).data
        p1 = model.predict_latent(Tensor(e1)).data
    decoded = model.greedy_decode(e1)
    out, used, seen, invalid = [], [], set(), 0
    for i, seq in enumerate(decoded):
        seq = [int(t) for t in seq]
        if not model.codec.is_valid(seq):
            invalid += 1
            continue
        key = tuple(seq)
        if key in seen:
            continue
        seen.add(key)
        out.append(seq)
        used.append(i)
        if k is not None and len(out) >= k:
            break
    status = "ok"
    if not out:
        status = "all decodes invalid" if invalid == len(seeds) else "no candidates"
        log.debug("candidate generation produced nothing (%s)", status)
    return Generation(out, used, p0, p1, invalid, status, decoded)
