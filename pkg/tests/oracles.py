"""Brute-force reference implementations shared by the tests."""

import numpy as np


def kuhn_matching(pred, gt, d_max, matched_pred=None):
    """Maximum matching by plain augmenting paths over explicit pixel distances.

    Returns the matching size; matched prediction pixels are marked in
    ``matched_pred`` when given.
    """
    p = [tuple(x) for x in np.argwhere(pred)]
    g = [tuple(x) for x in np.argwhere(gt)]
    adj = [[j for j, b in enumerate(g) if np.hypot(a[0] - b[0], a[1] - b[1]) <= d_max] for a in p]
    owner = [-1] * len(g)

    def augment(i, seen):
        for j in adj[i]:
            if not seen[j]:
                seen[j] = True
                if owner[j] < 0 or augment(owner[j], seen):
                    owner[j] = i
                    return True
        return False

    for i in range(len(p)):
        augment(i, [False] * len(g))
    if matched_pred is not None:
        for o in owner:
            if o >= 0:
                matched_pred[p[o]] = True
    return sum(o >= 0 for o in owner)


def oracle_counts(pred, gts, thresholds, d_max):
    rows = []
    for thr in thresholds:
        b = pred >= thr
        cnt_r = 0
        hit = np.zeros_like(b)
        for g in gts:
            cnt_r += kuhn_matching(b, g, d_max, hit)
        rows.append((cnt_r, sum(int(g.sum()) for g in gts), int(hit.sum()), int(b.sum())))
    return np.array(rows, dtype=float)


def oracle_f(c):
    r = c[:, 0] / np.maximum(c[:, 1], 1)
    p = np.where(c[:, 3] > 0, c[:, 2] / np.maximum(c[:, 3], 1), 0)
    return np.where(p + r > 0, 2 * p * r / np.maximum(p + r, 1e-12), 0)


def random_case(rng, size=16, annotators=2):
    gt = np.zeros((size, size), bool)
    for _ in range(3):
        if rng.random() < 0.5:
            gt[rng.integers(size), rng.integers(2, 6):rng.integers(8, size)] = True
        else:
            gt[rng.integers(2, 6):rng.integers(8, size), rng.integers(size)] = True
    gts = [gt]
    for _ in range(annotators - 1):
        gts.append(np.roll(gt, rng.integers(-1, 2), axis=int(rng.integers(2))))
    pred = np.clip(np.roll(gt.astype(float), 1, axis=1) * rng.uniform(0.3, 1, gt.shape)
                   + rng.uniform(0, 0.5, gt.shape) * (rng.random(gt.shape) < 0.15), 0, 1)
    return pred, gts
