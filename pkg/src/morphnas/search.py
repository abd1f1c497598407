"""Desk-scale architecture search driven by the NAO surrogate."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import nao
from . import train
from .cells import Architecture, Backbone, build_from_architecture, random_architecture
from .data import Dataset

log = logging.getLogger(__name__)


@dataclass
class SearchBudget:
    iterations: int = 2
    candidates: int = 8
    proxy_epochs: int = 2
    retrain_epochs: int = 2

    def __post_init__(self):
        if self.iterations < 1 or self.candidates < 1 or self.proxy_epochs < 0 or self.retrain_epochs < 0:
            raise ValueError("search budget must be positive")


@dataclass
class SearchConfig:
    space: str
    backbone: Backbone
    budget: SearchBudget = field(default_factory=SearchBudget)
    train: train.TrainConfig = field(default_factory=train.TrainConfig)
    nao: nao.NaoConfig = field(default_factory=nao.NaoConfig)
    seed: int = 0
    jobs: int = 1
    eta_retries: int = 10


@dataclass
class HistoryRecord:
    cell: str
    score: float
    iteration: int

    def to_json(self) -> str:
        return json.dumps({"cell": self.cell, "score": round(self.score, 8), "iteration": self.iteration})


@dataclass
class SearchResult:
    best: Architecture
    best_score: float
    history: list[HistoryRecord]
    final_score: float | None = None
    invalid_decodes: int = 0
    random_fills: int = 0

    def best_so_far(self) -> list[float]:
        return list(np.maximum.accumulate([h.score for h in self.history]))


def evaluate_architecture(
    arch: Architecture, backbone: Backbone, space: str, dataset: Dataset, cfg: train.TrainConfig
) -> float:
    """Train from scratch and return the validation score (accuracy or ODS).

    Divergence scores 0 so the search can carry on.
    """
    rng = np.random.default_rng(cfg.seed)
    net = build_from_architecture(arch, backbone, space, rng=rng)
    try:
        if backbone.task == "classification":
            train.train_classifier(net, dataset.train.x, dataset.train.y, cfg=cfg)
            return 1.0 - train.classification_error(net, dataset.val.x, dataset.val.y)
        train.train_edge(net, dataset.train.x, dataset.train.gts, cfg)
        probs = train.predict_edges(net, dataset.val.x)
        return metrics.evaluate(list(probs), dataset.val.gts, dataset.val.ids).ods
    except train.TrainingDiverged as exc:
        log.warning("candidate diverged (%s); scoring 0", exc)
        return 0.0


def _evaluate_job(args) -> float:
    return evaluate_architecture(*args)


def _evaluate_many(archs, cfg: SearchConfig, dataset, epochs: int, seeds) -> list[float]:
    jobs = [
        (a, cfg.backbone, cfg.space, dataset, train.TrainConfig(**{**cfg.train.__dict__, "epochs": epochs, "seed": s}))
        for a, s in zip(archs, seeds)
    ]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_evaluate_job, jobs))
    return [_evaluate_job(j) for j in jobs]


def codec_for(backbone: Backbone, space: str) -> nao.ArchCodec:
    return nao.ArchCodec(backbone.B, backbone.role_spaces(space), backbone.cell_roles())


def _normalise(scores: np.ndarray) -> np.ndarray:
    lo, hi = scores.min(), scores.max()
    if hi - lo < 1e-12:
        return np.full_like(scores, 0.5)
    return (scores - lo) / (hi - lo)


def _fresh_random(cfg: SearchConfig, rng, seen: set, count: int) -> list[Architecture]:
    out = []
    for _ in range(1000 * max(count, 1)):
        if len(out) == count:
            break
        a = random_architecture(cfg.backbone, cfg.space, rng)
        key = tuple(a.tokens())
        if key not in seen:
            seen.add(key)
            out.append(a)
    return out


def search_loop(cfg: SearchConfig, dataset: Dataset, on_record=None) -> SearchResult:
    """Evaluate, fit the surrogate, generate; repeat for ``budget.iterations`` rounds.

    Round 0 evaluates random candidates. Later rounds evaluate candidates
    decoded from latent-space ascent seeded by the best architectures so far.
    A seed whose ascent decodes to a known or invalid architecture is retried
    with a doubled step size, up to ``eta_retries`` times; remaining slots are
    filled with fresh random candidates.
    """
    b = cfg.budget
    rng = np.random.default_rng(cfg.seed)
    codec = codec_for(cfg.backbone, cfg.space)
    seen: set = set()
    evaluated: list[tuple[Architecture, float]] = []
    history: list[HistoryRecord] = []
    invalid = fills = 0
    candidates = _fresh_random(cfg, rng, seen, b.candidates)
    for it in range(b.iterations):
        seeds = [cfg.seed * 100_003 + it * 1_009 + k for k in range(len(candidates))]
        scores = _evaluate_many(candidates, cfg, dataset, b.proxy_epochs, seeds)
        for a, s in zip(candidates, scores):
            evaluated.append((a, s))
            rec = HistoryRecord(a.to_text(), float(s), it)
            history.append(rec)
            if on_record:
                on_record(rec)
        log.info("iteration %d: best %.4f", it, max(s for _, s in evaluated))
        if it == b.iterations - 1:
            break
        tokens = np.array([a.tokens() for a, _ in evaluated])
        norm = _normalise(np.array([s for _, s in evaluated]))
        ncfg = nao.NaoConfig(**{**cfg.nao.__dict__, "seed": cfg.seed + it})
        model = nao.train_nao(tokens, norm, codec, ncfg).model
        top = np.argsort(-norm, kind="stable")[: b.candidates]
        candidates = []
        pending = list(top)
        eta = cfg.nao.eta
        for _ in range(cfg.eta_retries):
            # per-seed step-size escalation: a seed stops once it decodes to something new
            gen = nao.generate_candidates(model, tokens[pending], eta, cfg.nao.steps)
            still = []
            for idx, seq in zip(pending, gen.decoded):
                key = tuple(int(t) for t in seq)
                if not codec.is_valid(key):
                    invalid += 1
                    still.append(idx)
                elif key in seen:
                    still.append(idx)
                elif len(candidates) < b.candidates:
                    seen.add(key)
                    candidates.append(codec.decode(key))
            pending = still
            if not pending or len(candidates) >= b.candidates:
                break
            eta *= 2
        missing = b.candidates - len(candidates)
        if missing:
            log.info("iteration %d: %d novel surrogate candidates, %d random fills", it + 1, len(candidates), missing)
            fills += missing
            candidates += _fresh_random(cfg, rng, seen, missing)
    best_idx = int(np.argmax([s for _, s in evaluated]))
    best, best_score = evaluated[best_idx]
    return SearchResult(best, float(best_score), history, invalid_decodes=invalid, random_fills=fills)


def retrain(arch: Architecture, cfg: SearchConfig, dataset: Dataset, seed: int) -> float:
    tcfg = train.TrainConfig(**{**cfg.train.__dict__, "epochs": cfg.budget.retrain_epochs, "seed": seed})
    return evaluate_architecture(arch, cfg.backbone, cfg.space, dataset, tcfg)


def random_baseline(cfg: SearchConfig, dataset: Dataset, n: int = 8) -> tuple[list[Architecture], list[float]]:
    """Scores of ``n`` random architectures under the retraining protocol."""
    rng = np.random.default_rng(cfg.seed + 7919)
    archs = _fresh_random(cfg, rng, set(), n)
    seeds = [cfg.seed * 100_003 + 50_000 + k for k in range(n)]
    return archs, _evaluate_many(archs, cfg, dataset, cfg.budget.retrain_epochs, seeds)
