"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.

Run on its own with ``pytest tests/test_acceptance.py -s`` to see the lines
as they are produced; they are also collected in the terminal summary.
Criterion 7 runs three full desk-scale searches and takes about 25 minutes
on one CPU core.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from morphnas import cells as C
from morphnas import checks
from morphnas import data as D
from morphnas import metrics as E
from morphnas import morphology as M
from morphnas import nao
from morphnas import search as S
from morphnas import tensor as T
from morphnas.cli import classical_gradient, main
from morphnas.pseudo import VARIANTS
from morphnas.tensor import Tensor
from oracles import oracle_counts, oracle_f, random_case

# pinned tolerances and budgets
COLLAPSE_IMAGES, COLLAPSE_SECONDS = 100, 10.0
GRAD_TOL, GRAD_STEP, GRAD_POINTS, GRAD_SECONDS = 1e-4, 1e-3, 20, 60.0
ALGEBRA_IMAGES, ALGEBRA_SECONDS = 100, 30.0
CELLS_PER_SPACE = 1000
NAO_CORPUS, NAO_HELDOUT, NAO_SECONDS = 200, 50, 300.0
NAO_RECON, NAO_SPEARMAN, NAO_IMPROVED = 0.95, 0.8, 0.90
SEARCH_SEEDS, SEARCH_SECONDS = (0, 1, 2), 1800.0
EDGE_F1_TOL, EDGE_BASELINE_ODS, EDGE_SECONDS = 0.01, 0.90, 120.0


# ---------------------------------------------------------------------------
# 1. oracle collapse
# ---------------------------------------------------------------------------


def test_criterion_1_oracle_collapse(verdict):
    t0 = time.perf_counter()
    results = {v: checks.oracle_collapse(v, n_images=COLLAPSE_IMAGES, seed=11) for v in VARIANTS}
    elapsed = time.perf_counter() - t0
    ok = all(r.passed for r in results.values()) and elapsed < COLLAPSE_SECONDS
    detail = ", ".join(f"{v} {r.detail.split()[0]}" for v, r in results.items())
    assert verdict(1, "oracle collapse, bitwise", ok, f"{detail}; {elapsed:.1f}s < {COLLAPSE_SECONDS:g}s")


# ---------------------------------------------------------------------------
# 2. gradient checks
# ---------------------------------------------------------------------------


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _tie_free(rng, shape, k, stride, mode):
    for _ in range(1000):
        x = rng.standard_normal(shape)
        if checks.window_gap(x, k, stride, mode) > 10 * GRAD_STEP:
            return x
    raise RuntimeError("no tie-free point")


def _case(name, rng):
    """(fn, inputs) at a fresh generic float64 point."""
    r = lambda *s: Tensor(rng.standard_normal(s), requires_grad=True)  # noqa: E731
    if name == "add/sub/mul/div":
        a, b = r(3, 4), Tensor(rng.uniform(0.5, 2, (3, 4)) * rng.choice([-1, 1], (3, 4)), requires_grad=True)
        return (lambda a, b: (a + b) * a - a / b), [a, b]
    if name == "neg/pow/exp/log":
        a = Tensor(rng.uniform(0.5, 2, (3, 4)), requires_grad=True)
        return (lambda a: T.log(a) + T.exp(-a) + a ** 3), [a]
    if name == "tanh/sigmoid":
        a = r(3, 4)
        return (lambda a: T.tanh(a) * T.sigmoid(a)), [a]
    if name == "relu":
        a = Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)
        return T.relu, [a]
    if name == "matmul":
        return T.matmul, [r(3, 4), r(4, 2)]
    if name == "sum/mean/reshape/transpose":
        a = r(2, 3, 4)
        return (lambda a: a.sum(axis=1) * a.mean(axis=(0, 1)) + a.reshape(6, 4).transpose().sum(axis=1)), [a]
    if name == "getitem/concat":
        a, b = r(3, 4), r(2, 4)
        return (lambda a, b: T.concat([a[1:, ::2], b[:, 1:3]], axis=0)), [a, b]
    if name == "log_softmax":
        return (lambda a: T.log_softmax(a, axis=-1)), [r(3, 5)]
    if name == "embedding":
        idx = rng.integers(0, 6, (2, 3))
        return (lambda w: T.embedding(w, idx)), [r(6, 4)]
    if name == "cross_entropy":
        y = rng.integers(0, 5, 4)
        return (lambda z: T.cross_entropy(z, y)), [r(4, 5)]
    if name == "bce_with_logits":
        y = rng.integers(0, 2, (4, 5)).astype(float)
        return (lambda z: T.bce_with_logits(z, y, pos_weight=2.5)), [r(4, 5)]
    if name == "mse_loss":
        y = rng.standard_normal(5)
        return (lambda z: T.mse_loss(z, y)), [r(5)]
    if name == "conv2d":
        return (lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1)), [r(1, 2, 5, 5), r(3, 2, 3, 3), r(3)]
    if name == "conv2d grouped":
        return (lambda x, w: T.conv2d(x, w, None, padding=2, groups=2)), [r(1, 2, 4, 4), r(2, 1, 5, 5)]
    if name == "conv_transpose2d":
        return (lambda x, w, b: T.conv_transpose2d(x, w, b, stride=2, padding=1)), [r(1, 3, 3, 3), r(3, 2, 4, 4), r(2)]
    if name in ("pool max", "pool min"):
        mode = name.split()[1]
        x = Tensor(_tie_free(rng, (1, 2, 6, 6), 3, 1, mode), requires_grad=True)
        return (lambda x: T.pool2d(x, mode, 3, 1)), [x]
    if name == "pool avg":
        return (lambda x: T.pool2d(x, "avg", 3, 2, padding=1)), [r(1, 2, 6, 6)]
    if name == "pixel_shuffle/unshuffle":
        return (lambda x: T.pixel_unshuffle(T.pixel_shuffle(x, 2) * 2.0, 1)), [r(1, 8, 2, 3)]
    if name in ("batch_norm train", "batch_norm eval"):
        training = name.endswith("train")
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2, 3)
        g = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        return (lambda x, g, b: T.batch_norm(x, g, b, rm.copy(), rv.copy(), training)), [r(4, 3, 2, 2), g, r(3)]
    if name == "upsample_bilinear":
        return (lambda x: T.upsample_bilinear(x, (7, 5))), [r(1, 2, 3, 4)]
    if name == "upsample_nearest":
        return (lambda x: T.upsample_nearest(x, 3)), [r(1, 2, 2, 3)]
    if name == "dropout":
        return (lambda x: T.dropout(x, 0.3, np.random.default_rng(0), True)), [r(3, 4)]
    if name == "lstm":
        d, h = 3, 4
        c0 = Tensor(np.zeros((2, h)))
        return (lambda x, h0, wi, wh, b: T.lstm(x, h0, c0, wi, wh, b)), [
            r(2, 4, d), r(2, h), Tensor(rng.standard_normal((d, 4 * h)) * 0.5, requires_grad=True),
            Tensor(rng.standard_normal((h, 4 * h)) * 0.5, requires_grad=True), r(4 * h),
        ]
    raise KeyError(name)


OPS = [
    "add/sub/mul/div", "neg/pow/exp/log", "tanh/sigmoid", "relu", "matmul", "sum/mean/reshape/transpose",
    "getitem/concat", "log_softmax", "embedding", "cross_entropy", "bce_with_logits", "mse_loss",
    "conv2d", "conv2d grouped", "conv_transpose2d", "pool max", "pool min", "pool avg",
    "pixel_shuffle/unshuffle", "batch_norm train", "batch_norm eval", "upsample_bilinear",
    "upsample_nearest", "dropout", "lstm",
]


def test_criterion_2_gradient_checks(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    for name in OPS:
        errs = []
        for _ in range(GRAD_POINTS):
            fn, inputs = _case(name, rng)
            errs += checks.gradcheck(fn, inputs, step=GRAD_STEP, rng=rng)
        worst[name] = max(errs)
    layers = {v: checks.layer_gradcheck(v, points=GRAD_POINTS, seed=5, tol=GRAD_TOL) for v in VARIANTS}
    elapsed = time.perf_counter() - t0
    failing = [n for n, e in worst.items() if e > GRAD_TOL] + [v for v, r in layers.items() if not r.passed]
    ok = not failing and elapsed < GRAD_SECONDS
    detail = (f"{len(OPS)} ops + {len(layers)} layers x {GRAD_POINTS} points, "
              f"max op rel err {max(worst.values()):.1e}, tol {GRAD_TOL:g}, step {GRAD_STEP:g}, "
              f"failing {failing or 'none'}; {elapsed:.1f}s < {GRAD_SECONDS:g}s")
    assert verdict(2, "64-bit finite-difference gradient checks", ok, detail)


# ---------------------------------------------------------------------------
# 3. morphological algebra
# ---------------------------------------------------------------------------


def test_criterion_3_algebra(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    flat = [M.disk(2), M.square(1), M.cross(1), M.StructuringElement.flat(((0, 0), (0, 2), (1, -1), (-2, 1)))]
    weighted = M.StructuringElement(((0, 0), (1, 0), (0, -1), (-1, 1)), (0.0, -3.0, 2.0, -1.5))
    fails = dict.fromkeys(["increasing", "extensivity", "duality", "idempotence", "Gb=Ge+Gi", "Gb>=0"], 0)
    for n in range(ALGEBRA_IMAGES):
        f = rng.integers(0, 256, (12, 12)).astype(np.float64)
        g = f + rng.integers(0, 30, f.shape)
        se = flat[n % len(flat)]
        for s in (se, weighted):
            if not (np.all(M.dilate(f, s) <= M.dilate(g, s)) and np.all(M.erode(f, s) <= M.erode(g, s))
                    and np.all(M.opening(f, s) <= M.opening(g, s)) and np.all(M.closing(f, s) <= M.closing(g, s))):
                fails["increasing"] += 1
        if not (np.all(M.erode(f, se) <= f) and np.all(f <= M.dilate(f, se))
                and np.all(M.opening(f, se) <= f) and np.all(f <= M.closing(f, se))):
            fails["extensivity"] += 1
        for s in (se, weighted):
            if not np.array_equal(M.erode(f, s), -M.dilate(-f, s.reflect())):
                fails["duality"] += 1
        o, c = M.opening(f, se), M.closing(f, se)
        if not (np.array_equal(M.opening(o, se), o) and np.array_equal(M.closing(c, se), c)):
            fails["idempotence"] += 1
        gr = M.gradients(f, se)
        if not np.array_equal(gr["G_b"], gr["G_e"] + gr["G_i"]):
            fails["Gb=Ge+Gi"] += 1
        if not np.all(gr["G_b"] >= 0):
            fails["Gb>=0"] += 1
    elapsed = time.perf_counter() - t0
    ok = sum(fails.values()) == 0 and elapsed < ALGEBRA_SECONDS
    detail = f"{ALGEBRA_IMAGES} images per property, failures {fails}; {elapsed:.1f}s < {ALGEBRA_SECONDS:g}s"
    assert verdict(3, "morphological algebra", ok, detail)


# ---------------------------------------------------------------------------
# 4. pixel shuffle
# ---------------------------------------------------------------------------


def test_criterion_4_pixel_shuffle(verdict):
    rng = np.random.default_rng(4)
    inverse_ok = True
    for r in (1, 2, 3):
        for _ in range(20):
            n, c, h, w = (int(v) for v in rng.integers(1, 4, 4))
            x = rng.standard_normal((n, c * r * r, h, w))
            y = T.pixel_shuffle(Tensor(x), r)
            inverse_ok &= y.shape == (n, c, h * r, w * r)
            inverse_ok &= bool(np.array_equal(T.pixel_unshuffle(y, r).data, x))
    fig = np.array([[[12, 8], [11, 2]], [[13, 10], [4, 0]], [[14, 1], [7, 9]], [[5, 3], [6, 15]]], np.float32)
    layout = T.pixel_shuffle(Tensor(fig), 2).data[0]
    expected = np.array([[12, 13, 8, 10], [14, 5, 1, 3], [11, 4, 2, 0], [7, 6, 9, 15]])
    layout_ok = bool(np.array_equal(layout, expected))
    ok = inverse_ok and layout_ok
    assert verdict(4, "pixel shuffle", ok, f"inverse on 60 random shapes r in 1..3: {inverse_ok}; 4x4 layout exact: {layout_ok}")


# ---------------------------------------------------------------------------
# 5. cell encoding
# ---------------------------------------------------------------------------


def test_criterion_5_cell_encoding(verdict):
    rng = np.random.default_rng(5)
    bad_roundtrip = bad_upper = 0
    for name in C.SEARCH_SPACES:
        for _ in range(CELLS_PER_SPACE):
            cell = C.random_cell(name, int(rng.integers(1, 8)), rng)
            if C.decode_cell(C.encode_cell(cell), cell.B, name) != cell or C.parse_cell(cell.to_text()) != cell:
                bad_roundtrip += 1
            if np.any(np.tril(C.adjacency_matrix(cell))):
                bad_upper += 1
    edge_sizes = {n: len(C.get_space(n).ops) for n in ("edge-plain", "edge-dilation", "edge-gradient")}
    ok = bad_roundtrip == 0 and bad_upper == 0 and set(edge_sizes.values()) == {6}
    detail = (f"{CELLS_PER_SPACE} cells x {len(C.SEARCH_SPACES)} spaces, roundtrip failures {bad_roundtrip}, "
              f"non-upper-triangular {bad_upper}, edge space sizes {edge_sizes}")
    assert verdict(5, "cell encoding", ok, detail)


# ---------------------------------------------------------------------------
# 6. NAO surrogate
# ---------------------------------------------------------------------------


def test_criterion_6_nao(verdict):
    t0 = time.perf_counter()
    space, B = "cls-dilation", 5
    tokens, scores = nao.synthetic_corpus(space, B, NAO_CORPUS + NAO_HELDOUT, np.random.default_rng(6))
    train_t, train_s = tokens[:NAO_CORPUS], scores[:NAO_CORPUS]
    test_t, test_s = tokens[NAO_CORPUS:], scores[NAO_CORPUS:]
    codec = nao.ArchCodec(B, (space,), ("normal",))
    model = nao.train_nao(train_t, train_s, codec, nao.NaoConfig(seed=0)).model
    recon = nao.token_accuracy(model, train_t)
    rho = float(spearmanr(model.predict(test_t), test_s).correlation)
    gen = nao.generate_candidates(model, train_t)
    improved = gen.improved_fraction
    valid = all(codec.is_valid(c) for c in gen.candidates) and len(gen.candidates) > 0
    elapsed = time.perf_counter() - t0
    ok = recon >= NAO_RECON and rho >= NAO_SPEARMAN and improved >= NAO_IMPROVED and valid and elapsed < NAO_SECONDS
    detail = (f"reconstruction {recon:.3f} >= {NAO_RECON}, held-out Spearman {rho:.3f} >= {NAO_SPEARMAN} "
              f"on {NAO_HELDOUT} cells, improving {improved:.3f} >= {NAO_IMPROVED}, "
              f"{len(gen.candidates)} candidates all valid: {valid} ({gen.n_invalid} filtered); "
              f"{elapsed:.0f}s < {NAO_SECONDS:g}s")
    assert verdict(6, "NAO surrogate", ok, detail)


# ---------------------------------------------------------------------------
# 7. end-to-end desk search
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_7_desk_search(verdict):
    t0 = time.perf_counter()
    finals, randoms = [], []
    for seed in SEARCH_SEEDS:
        ds = D.synth_shapes_cls(seed)
        cfg = S.SearchConfig(
            "cls-dilation", C.Backbone("cifar-stack", N=1, F=8, B=5, num_classes=ds.num_classes),
            S.SearchBudget(iterations=2, candidates=8, proxy_epochs=2, retrain_epochs=2), seed=seed,
        )
        res = S.search_loop(cfg, ds)
        finals.append(S.retrain(res.best, cfg, ds, seed=seed + 12_345))
        randoms.append(float(np.mean(S.random_baseline(cfg, ds, n=8)[1])))
    elapsed = time.perf_counter() - t0
    final, rand = float(np.mean(finals)), float(np.mean(randoms))
    ok = final > rand and elapsed < SEARCH_SECONDS
    detail = (f"searched {final:.3f} vs random {rand:.3f} val accuracy over seeds {SEARCH_SEEDS} "
              f"(per seed {np.round(finals, 3).tolist()} vs {np.round(randoms, 3).tolist()}); "
              f"{elapsed / 60:.1f} min < {SEARCH_SECONDS / 60:g} min")
    assert verdict(7, "end-to-end desk search", ok, detail)


# ---------------------------------------------------------------------------
# 8. edge metrics
# ---------------------------------------------------------------------------


def test_criterion_8_edge_metrics(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    thresholds = np.linspace(0.05, 0.95, 10)
    worst = 0.0
    for _ in range(20):
        cases = [random_case(rng, size=int(rng.integers(9, 17))) for _ in range(3)]
        d_max = float(rng.choice([1.0, 1.5, 2.0]))
        res = E.evaluate([c[0] for c in cases], [c[1] for c in cases], thresholds=thresholds, d_max=d_max)
        per = [oracle_counts(p, g, thresholds, d_max) for p, g in cases]
        ref = oracle_f(np.sum(per, axis=0))
        worst = max(worst, np.abs(res.f1 - ref).max(), abs(res.ois - np.mean([oracle_f(c).max() for c in per])))

    runs, ods_base = [], None
    for seed in (0, 1):
        ds = D.synth_shapes_edge(seed)
        for split_name in ("train", "val", "test"):
            split = getattr(ds, split_name)
            res = E.evaluate([classical_gradient(x) for x in split.x], split.gts, split.ids)
            runs.append(res.ois_ge_ods)
            if seed == 0 and split_name == "test":
                ods_base = res.ods
    elapsed = time.perf_counter() - t0
    ok = worst <= EDGE_F1_TOL and all(runs) and ods_base >= EDGE_BASELINE_ODS and elapsed < EDGE_SECONDS
    detail = (f"oracle max |dF1| {worst:.4f} <= {EDGE_F1_TOL} on 60 images up to 16x16; "
              f"OIS >= ODS on {sum(runs)}/{len(runs)} dataset runs; classical gradient ODS {ods_base:.4f} "
              f">= {EDGE_BASELINE_ODS}; {elapsed:.0f}s < {EDGE_SECONDS:g}s")
    assert verdict(8, "edge metrics", ok, detail)


# ---------------------------------------------------------------------------
# 9. determinism
# ---------------------------------------------------------------------------

TINY_SEARCH = "iterations = 2\ncandidates = 3\nproxy_epochs = 1\nretrain_epochs = 1\nnao_epochs = 40\n" \
              "n_train = 48\nn_val = 24\nn_test = 24\n"
TINY_EDGE = "iterations = 2\ncandidates = 2\nproxy_epochs = 1\nretrain_epochs = 1\nnao_epochs = 30\n" \
            "n_train = 6\nn_val = 4\nn_test = 4\nimage_size = 32\n"


def _files(d: Path, names):
    return {n: (d / n).read_bytes() for n in names}


def test_criterion_9_determinism(verdict, tmp_path, capsys):
    (tmp_path / "cls.cfg").write_text(TINY_SEARCH)
    (tmp_path / "edge.cfg").write_text(TINY_EDGE)
    img = tmp_path / "in.pgm"
    from morphnas import io
    io.write_pgm(img, np.random.default_rng(9).integers(0, 256, (20, 20)))
    runs = {}
    for k in ("a", "b"):
        out = tmp_path / k
        codes = [
            main(["search", "--space", "cls-dilation", "--backbone", "cifar-stack", "--config",
                  str(tmp_path / "cls.cfg"), "--out-dir", str(out / "cls"), "--seed", "4"]),
            main(["search", "--space", "edge-gradient", "--backbone", "unet-search", "--config",
                  str(tmp_path / "edge.cfg"), "--out-dir", str(out / "edge"), "--seed", "4"]),
            main(["edge-run", "--model", str(out / "edge" / "model"), "--data", "synth-shapes-edge",
                  "--seed", "4", "--out-dir", str(out / "run")]),
            main(["edge-run", "--model", "classical-gradient", "--data", "synth-shapes-edge",
                  "--seed", "4", "--nms", "--out-dir", str(out / "classical")]),
            main(["apply", "--op", "close", "--se", "disk:2", "--in", str(img), "--out", str(out / "c.pgm")]),
            main(["layer-check", "--variant", "upsampling", "--seed", "4", "--points", "3"]),
        ]
        stdout = capsys.readouterr().out
        files = {}
        for sub, names in (("cls", ["best_cell.txt", "report.txt", "history.jsonl", "history.csv"]),
                           ("edge", ["best_cell.txt", "report.txt", "history.jsonl", "test_counts.csv"]),
                           ("run", ["metrics.txt", "counts.csv", "pr.csv"]),
                           ("classical", ["metrics.txt", "counts.csv"])):
            files.update({f"{sub}/{n}": v for n, v in _files(out / sub, names).items()})
        files["c.pgm"] = (out / "c.pgm").read_bytes()
        runs[k] = (codes, stdout, files)
    same_files = runs["a"][2] == runs["b"][2]
    same_stdout = runs["a"][1] == runs["b"][1]
    codes_ok = runs["a"][0] == runs["b"][0] == [0] * 6
    ok = same_files and same_stdout and codes_ok
    detail = (f"6 CLI runs repeated with seed 4: {len(runs['a'][2])} output files identical: {same_files}, "
              f"stdout identical: {same_stdout}, exit codes {runs['a'][0]}")
    assert verdict(9, "determinism", ok, detail)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-s", "-v"]))
