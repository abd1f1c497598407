"""Edge-detection benchmark metrics: matching, P/R/F curves, ODS, OIS, AP, R50.

Counting follows the usual boundary-benchmark convention. Recall is summed
over every annotator (``cntR / sumR``). A predicted pixel counts as correct
if it matches a pixel of any annotator (``cntP / sumP``). Several maximum
matchings can leave different predicted pixels unmatched; the matched set is
made unique by preferring pixels earlier in raster order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

DEFAULT_THRESHOLDS = np.round(np.linspace(0.01, 0.99, 99), 4)
DMAX_FRACTION = 0.0075


def default_dmax(shape) -> float:
    h, w = shape[-2:]
    return DMAX_FRACTION * float(np.hypot(h, w))


def _candidate_pairs(pred: np.ndarray, gt: np.ndarray, d_max: float):
    p = np.argwhere(pred)
    g = np.argwhere(gt)
    if len(p) == 0 or len(g) == 0:
        return p, g, np.zeros((0, 3))
    dist = cKDTree(p).sparse_distance_matrix(cKDTree(g), d_max, output_type="ndarray")
    pairs = np.stack([dist["i"], dist["j"], dist["v"]], axis=1) if len(dist) else np.zeros((0, 3))
    return p, g, pairs


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    return pred, gt


def match_edges_greedy(pred: np.ndarray, gt: np.ndarray, d_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy nearest-first one-to-one matching within ``d_max`` pixels."""
    pred, gt = _check_pair(pred, gt)
    p, g, pairs = _candidate_pairs(pred, gt, d_max)
    mp, mg = np.zeros_like(pred), np.zeros_like(gt)
    if len(pairs) == 0:
        return mp, mg
    order = np.lexsort((pairs[:, 1], pairs[:, 0], pairs[:, 2]))
    used_p = np.zeros(len(p), dtype=bool)
    used_g = np.zeros(len(g), dtype=bool)
    for i, j, _ in pairs[order]:
        i, j = int(i), int(j)
        if not used_p[i] and not used_g[j]:
            used_p[i] = used_g[j] = True
    mp[tuple(p[used_p].T)] = True
    mg[tuple(g[used_g].T)] = True
    return mp, mg


def match_edges(pred: np.ndarray, gt: np.ndarray, d_max: float) -> tuple[np.ndarray, np.ndarray]:
    """Maximum-cardinality one-to-one matching of pixels closer than ``d_max``.

    Returns boolean masks of matched predicted and matched ground-truth
    pixels. Among maximum matchings, the matched predictions are the ones
    earliest in raster order. Below one pixel of tolerance only exact
    overlaps can match.
    """
    pred, gt = _check_pair(pred, gt)
    if d_max < 1:
        both = pred & gt
        return both, both.copy()
    p, g, pairs = _candidate_pairs(pred, gt, d_max)
    mp, mg = np.zeros_like(pred), np.zeros_like(gt)
    if len(pairs) == 0:
        return mp, mg
    adj = csr_matrix(
        (np.ones(len(pairs), dtype=np.int8), (pairs[:, 0].astype(int), pairs[:, 1].astype(int))),
        shape=(len(p), len(g)),
    )
    match = _raster_first_matching(adj)
    hit = match >= 0
    mp[tuple(p[hit].T)] = True
    mg[tuple(g[match[hit]].T)] = True
    return mp, mg


def _raster_first_matching(adj: csr_matrix) -> np.ndarray:
    """Maximum matching built by augmenting paths from each row in raster order.

    Matchable row sets form a matroid, so adding rows in order whenever an
    augmenting path exists yields the unique raster-first matched set.
    Columns seen by a failed search can never reach a free column again,
    so they stay marked for the rest of the run.
    """
    n_p, n_g = adj.shape
    indptr, indices = adj.indptr.tolist(), adj.indices.tolist()
    owner = [-1] * n_g
    match = [-1] * n_p
    dead: set[int] = set()
    n_free = n_g
    for u in range(n_p):
        if n_free == 0:
            break
        nb = indices[indptr[u]:indptr[u + 1]]
        free = next((c for c in nb if owner[c] < 0), -1)
        if free >= 0:
            owner[free], match[u] = u, free
            n_free -= 1
            continue
        visited: set[int] = set()
        parent: dict[int, int] = {}
        stack = [iter(nb)]
        rows = [u]
        found = -1
        while stack and found < 0:
            for c in stack[-1]:
                if c in dead:
                    continue
                dead.add(c)
                visited.add(c)
                parent[c] = rows[-1]
                if owner[c] < 0:
                    found = c
                else:
                    o = owner[c]
                    rows.append(o)
                    stack.append(iter(indices[indptr[o]:indptr[o + 1]]))
                break
            else:
                stack.pop()
                rows.pop()
        if found < 0:
            continue
        dead -= visited
        n_free -= 1
        c = found
        while c >= 0:
            r = parent[c]
            c, match[r] = match[r], c
            owner[match[r]] = r
    return np.array(match, dtype=np.int64)


MATCHERS = {"optimal": match_edges, "greedy": match_edges_greedy}


@dataclass
class ImageCounts:
    """Per-threshold counts for one image."""

    image_id: str
    cnt_r: np.ndarray
    sum_r: np.ndarray
    cnt_p: np.ndarray
    sum_p: np.ndarray


def _prf(cnt_r, sum_r, cnt_p, sum_p):
    cnt_r, sum_r, cnt_p, sum_p = (np.asarray(a, dtype=np.float64) for a in (cnt_r, sum_r, cnt_p, sum_p))
    r = np.divide(cnt_r, sum_r, out=np.zeros_like(cnt_r), where=sum_r > 0)
    p = np.divide(cnt_p, sum_p, out=np.zeros_like(cnt_p), where=sum_p > 0)
    f = np.divide(2 * p * r, p + r, out=np.zeros_like(p), where=(p + r) > 0)
    return p, r, f


def image_counts(
    pred: np.ndarray,
    gts: Sequence[np.ndarray],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    d_max: float | None = None,
    image_id: str = "",
    matcher: Callable = match_edges,
) -> ImageCounts:
    pred = np.asarray(pred, dtype=np.float64)
    if not gts:
        raise ValueError(f"{image_id or 'image'}: no ground-truth maps")
    gts = [np.asarray(g) > 0 for g in gts]
    for g in gts:
        if g.shape != pred.shape:
            raise ValueError(f"{image_id or 'image'}: prediction {pred.shape} vs ground truth {g.shape}")
    d_max = default_dmax(pred.shape) if d_max is None else d_max
    k = len(thresholds)
    cnt_r, sum_r, cnt_p, sum_p = (np.zeros(k, dtype=np.int64) for _ in range(4))
    total_gt = sum(int(g.sum()) for g in gts)
    for t, thr in enumerate(thresholds):
        binary = pred >= thr
        hit = np.zeros_like(binary)
        for g in gts:
            mp, mg = matcher(binary, g, d_max)
            cnt_r[t] += int(mg.sum())
            hit |= mp
        sum_r[t] = total_gt
        cnt_p[t] = int(hit.sum())
        sum_p[t] = int(binary.sum())
    return ImageCounts(image_id, cnt_r, sum_r, cnt_p, sum_p)


def f1_curve(pred, gts, thresholds=DEFAULT_THRESHOLDS, d_max=None):
    """Per-threshold (precision, recall, F1) arrays for a single image."""
    c = image_counts(pred, gts, thresholds, d_max)
    return _prf(c.cnt_r, c.sum_r, c.cnt_p, c.sum_p)


@dataclass
class EdgeEvalResult:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    ods: float
    ods_threshold: float
    ois: float
    ap: float
    r50: float
    per_image: list[ImageCounts] = field(default_factory=list)

    @property
    def ois_ge_ods(self) -> bool:
        return self.ois >= self.ods - 1e-12

    def summary(self) -> dict[str, float]:
        return {"ODS": self.ods, "OIS": self.ois, "AP": self.ap, "R50": self.r50}


def average_precision(precision: np.ndarray, recall: np.ndarray) -> float:
    """Trapezoidal area under P(R), anchored at recall 0 with the highest-threshold precision."""
    order = np.argsort(recall, kind="stable")
    r = np.concatenate([[0.0], recall[order]])
    p_sorted = precision[order]
    p = np.concatenate([[p_sorted[0]], p_sorted])
    return float(np.clip(np.trapezoid(p, r) if hasattr(np, "trapezoid") else np.trapz(p, r), 0.0, 1.0))


def recall_at_precision(precision: np.ndarray, recall: np.ndarray, level: float = 0.5) -> float:
    """Recall where precision first falls to ``level`` scanning from the highest threshold.

    Thresholds are assumed ascending, so the scan runs from the end of the
    arrays. If precision never reaches ``level`` from above, the recall at the
    lowest threshold is returned; if precision is below ``level`` everywhere,
    the result is 0.
    """
    p, r = precision[::-1], recall[::-1]
    if not np.any(p >= level):
        return 0.0
    start = int(np.argmax(p >= level))
    for i in range(start + 1, len(p)):
        if p[i] <= level:
            p0, p1 = p[i - 1], p[i]
            w = 0.0 if p0 == p1 else (p0 - level) / (p0 - p1)
            return float(r[i - 1] + w * (r[i] - r[i - 1]))
    return float(r[-1])


def ods_ois(counts: Sequence[ImageCounts], thresholds=DEFAULT_THRESHOLDS) -> EdgeEvalResult:
    if not counts:
        raise ValueError("no images to evaluate")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    agg = [np.sum([getattr(c, a) for c in counts], axis=0) for a in ("cnt_r", "sum_r", "cnt_p", "sum_p")]
    p, r, f = _prf(*agg)
    best = int(np.argmax(f))
    ois = float(np.mean([_prf(c.cnt_r, c.sum_r, c.cnt_p, c.sum_p)[2].max() for c in counts]))
    return EdgeEvalResult(
        thresholds, p, r, f,
        ods=float(f[best]), ods_threshold=float(thresholds[best]), ois=ois,
        ap=average_precision(p, r), r50=recall_at_precision(p, r), per_image=list(counts),
    )


def evaluate(preds, gt_sets, ids=None, thresholds=DEFAULT_THRESHOLDS, d_max=None, nms=False,
             matcher: Callable = match_edges) -> EdgeEvalResult:
    """Evaluate a list of probability maps against their annotator sets."""
    if len(preds) != len(gt_sets):
        raise ValueError(f"{len(preds)} predictions for {len(gt_sets)} ground-truth sets")
    ids = ids or [f"img{i:04d}" for i in range(len(preds))]
    counts = []
    for pid, pred, gts in zip(ids, preds, gt_sets):
        pred = np.asarray(pred, dtype=np.float64)
        if nms:
            pred = thin_edges(pred)
        counts.append(image_counts(pred, gts, thresholds, d_max, pid, matcher))
    return ods_ois(counts, thresholds)


# ---------------------------------------------------------------------------
# non-maximum suppression
# ---------------------------------------------------------------------------


def thin_edges(prob: np.ndarray) -> np.ndarray:
    """3x3 directional thinning: keep pixels that are maximal across the edge.

    The edge normal is taken from the Sobel gradient of the map itself and
    quantised to 0, 45, 90 or 135 degrees.
    """
    prob = np.asarray(prob, dtype=np.float64)
    gy = ndimage.sobel(prob, axis=0, mode="nearest")
    gx = ndimage.sobel(prob, axis=1, mode="nearest")
    angle = (np.rad2deg(np.arctan2(gy, gx)) + 180.0) % 180.0
    sector = (np.round(angle / 45.0).astype(int)) % 4
    pad = np.pad(prob, 1, mode="constant", constant_values=0)
    h, w = prob.shape
    steps = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    keep = np.zeros_like(prob, dtype=bool)
    for s, (dy, dx) in steps.items():
        a = pad[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        b = pad[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        keep |= (sector == s) & (prob >= a) & (prob >= b)
    return np.where(keep, prob, 0.0)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("image_id", "threshold", "tp", "fp", "fn")


def write_counts_csv(path, result: EdgeEvalResult) -> None:
    """One row per (image, threshold): tp = matched predictions, fn = missed annotations."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for c in result.per_image:
            for t, thr in enumerate(result.thresholds):
                tp = int(c.cnt_p[t])
                w.writerow([c.image_id, f"{thr:.4f}", tp, int(c.sum_p[t]) - tp, int(c.sum_r[t] - c.cnt_r[t])])


def write_summary_csv(path, result: EdgeEvalResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall", "f1"])
        for row in zip(result.thresholds, result.precision, result.recall, result.f1):
            w.writerow([f"{row[0]:.4f}", f"{row[1]:.6f}", f"{row[2]:.6f}", f"{row[3]:.6f}"])


def format_table(result: EdgeEvalResult) -> str:
    s = result.summary()
    head = "  ".join(f"{k:>6}" for k in s)
    vals = "  ".join(f"{v:6.4f}" for v in s.values())
    return f"{head}\n{vals}"
