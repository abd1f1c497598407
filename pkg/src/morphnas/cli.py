"""``morph`` command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checks
from . import config as C
from . import data as D
from . import io
from . import metrics as E
from . import morphology as M
from . import plotting
from . import search as S
from . import train
from .cells import SEARCH_SPACES, Backbone, BACKBONES, build_from_architecture, load_network, save_network
from .nao import NaoConfig
from .pseudo import VARIANTS

log = logging.getLogger("morphnas")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("MORPHNAS_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MORPHNAS_SEED must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# apply
# ---------------------------------------------------------------------------


def cmd_apply(args) -> int:
    se = M.parse_se(args.se)
    img, maxval = io.read_image(args.input)
    if img.ndim != 2:
        raise ValueError(f"{args.input}: expected a single-channel image")
    out = M.apply(args.op, img, se)
    io.write_image(args.output, out, maxval if maxval is not None else 255)
    log.info("%s with %s: %s -> %s", args.op, args.se, args.input, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# layer-check
# ---------------------------------------------------------------------------


def cmd_layer_check(args) -> int:
    seed = _seed(args.seed)
    results = checks.layer_check(args.variant, seed=seed, tol=args.tol, points=args.points)
    print(f"layer-check variant={args.variant} seed={seed} tol={args.tol:g}")
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------


def _search_config(cfg: dict, space: str, backbone: str) -> S.SearchConfig:
    num_classes = 4 if backbone == "cifar-stack" else 1
    bb = Backbone(backbone, N=cfg["N"], F=cfg["F"], B=cfg["B"], num_classes=num_classes)
    return S.SearchConfig(
        space=space,
        backbone=bb,
        budget=S.SearchBudget(cfg["iterations"], cfg["candidates"], cfg["proxy_epochs"], cfg["retrain_epochs"]),
        train=train.TrainConfig(
            lr=cfg["lr"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
            batch_size=cfg["batch_size"], cutout=cfg["cutout"],
        ),
        nao=NaoConfig(d=cfg["d"], epochs=cfg["nao_epochs"], lr=cfg["nao_lr"], lam=cfg["lam"],
                      eta=cfg["eta"], steps=cfg["steps"]),
        seed=cfg["seed"],
        jobs=cfg["jobs"],
    )


def _search_dataset(cfg: dict, backbone: str) -> D.Dataset:
    sizes = {"n_train": cfg["n_train"], "n_val": cfg["n_val"], "n_test": cfg["n_test"]}
    if cfg["image_size"]:
        sizes["size"] = cfg["image_size"]
    name = "synth-shapes-cls" if backbone == "cifar-stack" else "synth-shapes-edge"
    return D.load_dataset(name, seed=cfg["seed"], **sizes)


def _check_pair(space: str, backbone: str) -> None:
    if backbone == "cifar-stack" and not space.startswith("cls-"):
        raise UsageError(f"backbone {backbone} needs a cls-* space, got {space}")
    if backbone != "cifar-stack" and not space.startswith("edge-"):
        raise UsageError(f"backbone {backbone} needs an edge-* space, got {space}")


def cmd_search(args) -> int:
    _check_pair(args.space, args.backbone)
    cfg = C.resolve(C.SEARCH_DEFAULTS, args.config, {"seed": _seed(args.seed), "jobs": args.jobs})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = C.format_config({"space": args.space, "backbone": args.backbone, **cfg})
    (out / "config.txt").write_text(resolved)
    log.info("resolved config:\n%s", resolved.rstrip())

    scfg = _search_config(cfg, args.space, args.backbone)
    dataset = _search_dataset(cfg, args.backbone)
    history_path = out / "history.jsonl"
    with open(history_path, "w") as fh:
        def record(rec):
            fh.write(rec.to_json() + "\n")
            fh.flush()

        result = S.search_loop(scfg, dataset, on_record=record)
    (out / "best_cell.txt").write_text("\n".join(c.to_text() for c in result.best.cells) + "\n")

    # final retraining of the winner with a fresh weight seed
    tcfg = train.TrainConfig(**{**scfg.train.__dict__, "epochs": scfg.budget.retrain_epochs, "seed": cfg["seed"] + 1})
    net = build_from_architecture(result.best, scfg.backbone, scfg.space, rng=np.random.default_rng(tcfg.seed))
    lines = [
        f"space = {args.space}",
        f"backbone = {args.backbone}",
        f"evaluated = {len(result.history)}",
        f"best_search_score = {result.best_score:.6f}",
        f"invalid_decodes = {result.invalid_decodes}",
        f"random_fills = {result.random_fills}",
    ]
    if scfg.backbone.task == "classification":
        train.train_classifier(net, dataset.train.x, dataset.train.y, cfg=tcfg)
        val_err = train.classification_error(net, dataset.val.x, dataset.val.y)
        test_err = train.classification_error(net, dataset.test.x, dataset.test.y)
        lines += [f"final_val_accuracy = {1 - val_err:.6f}", f"final_test_error = {test_err:.6f}"]
    else:
        train.train_edge(net, dataset.train.x, dataset.train.gts, tcfg)
        res = E.evaluate(list(train.predict_edges(net, dataset.test.x)), dataset.test.gts, dataset.test.ids)
        lines += [f"final_test_{k.lower()} = {v:.6f}" for k, v in res.summary().items()]
        lines.append(f"ois_ge_ods = {'yes' if res.ois_ge_ods else 'no'}")
        E.write_counts_csv(out / "test_counts.csv", res)
        E.write_summary_csv(out / "test_pr.csv", res)
        plotting.plot_pr_curve(res, out / "test_pr.png", label="searched")
    save_network(net, out / "model", result.best, scfg.backbone, scfg.space)
    with open(out / "history.csv", "w") as fh:
        fh.write("index,iteration,score,best_so_far\n")
        for i, (h, b) in enumerate(zip(result.history, result.best_so_far())):
            fh.write(f"{i},{h.iteration},{h.score:.6f},{b:.6f}\n")
    plotting.plot_search_history([h.score for h in result.history], [h.iteration for h in result.history],
                                 out / "search_history.png")
    report = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(report)
    print(report, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# edge-eval / edge-run
# ---------------------------------------------------------------------------


def _load_prob(path: Path) -> np.ndarray:
    img, maxval = io.read_image(path)
    return img / maxval if maxval else img


def _collect(pred_dir: Path, gt_dir: Path):
    if not pred_dir.is_dir():
        raise FileNotFoundError(f"prediction directory not found: {pred_dir}")
    if not gt_dir.is_dir():
        raise FileNotFoundError(f"ground-truth directory not found: {gt_dir}")
    preds = {}
    for p in sorted(pred_dir.iterdir()):
        if p.suffix.lower() in (".pgm", ".mten"):
            preds.setdefault(p.stem, p)
    gts: dict[str, list[Path]] = {}
    for p in sorted(gt_dir.glob("*.pgm")):
        stem = p.stem
        base, _, k = stem.rpartition(".")
        key = base if base and k.isdigit() else stem
        gts.setdefault(key, []).append(p)
    if not preds:
        raise FileNotFoundError(f"{pred_dir}: no .pgm or .mten predictions")
    missing_gt = sorted(set(preds) - set(gts))
    if missing_gt:
        raise FileNotFoundError(f"no ground truth for prediction {preds[missing_gt[0]].name} in {gt_dir}")
    missing_pred = sorted(set(gts) - set(preds))
    if missing_pred:
        raise FileNotFoundError(f"no prediction for ground truth {gts[missing_pred[0]][0].name} in {pred_dir}")
    ids = sorted(preds)
    return ids, [_load_prob(preds[i]) for i in ids], [[io.read_image(g)[0] > 0 for g in gts[i]] for i in ids]


def _report_edges(result: E.EdgeEvalResult, out: Path, label: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    E.write_counts_csv(out / "counts.csv", result)
    E.write_summary_csv(out / "pr.csv", result)
    plotting.plot_pr_curve(result, out / "pr_curve.png", label=label)
    table = E.format_table(result)
    (out / "metrics.txt").write_text(table + f"\nods_threshold = {result.ods_threshold:.4f}\n")
    print(table)
    print(f"ODS threshold {result.ods_threshold:.2f}; OIS >= ODS: {'yes' if result.ois_ge_ods else 'NO'}")
    if not result.ois_ge_ods:
        log.warning("OIS (%.4f) is below ODS (%.4f) on this dataset", result.ois, result.ods)


def cmd_edge_eval(args) -> int:
    ids, preds, gts = _collect(Path(args.pred_dir), Path(args.gt_dir))
    result = E.evaluate(preds, gts, ids, nms=args.nms, d_max=args.d_max)
    _report_edges(result, Path(args.out_dir), "predictions")
    return EXIT_OK


def classical_gradient(x: np.ndarray) -> np.ndarray:
    """Morphological gradient (3x3 square) of the channel mean, scaled to [0, 1]."""
    g = M.morphological_gradient(np.asarray(x, dtype=np.float32).mean(axis=0), M.square(1))
    peak = float(g.max())
    return g / peak if peak > 0 else g


def cmd_edge_run(args) -> int:
    seed = _seed(args.seed)
    if args.data != "synth-shapes-edge":
        raise UsageError("edge-run supports --data synth-shapes-edge")
    dataset = D.synth_shapes_edge(seed)
    split = getattr(dataset, args.split)
    if args.model == "classical-gradient":
        probs = [classical_gradient(x) for x in split.x]
        label = "classical gradient"
    else:
        net, _, bb, _ = load_network(args.model)
        if bb.task != "edge":
            raise ValueError(f"{args.model}: checkpoint is a {bb.task} network")
        probs = list(train.predict_edges(net, split.x))
        label = "network"
    out = Path(args.out_dir)
    maps = out / "maps"
    gt_dir = out / "gt"
    maps.mkdir(parents=True, exist_ok=True)
    gt_dir.mkdir(parents=True, exist_ok=True)
    for pid, p, gts in zip(split.ids, probs, split.gts):
        io.write_mten(maps / f"{pid}.mten", np.asarray(p, dtype=np.float32))
        io.write_pgm(maps / f"{pid}.pgm", np.asarray(p) * 255.0)
        for k, g in enumerate(gts):
            io.write_pgm(gt_dir / f"{pid}.{k}.pgm", np.asarray(g, dtype=np.uint8) * 255)
    result = E.evaluate(probs, split.gts, split.ids, nms=args.nms)
    _report_edges(result, out, label)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> Parser:
    p = Parser(prog="morph", description="Pseudo-morphological layers and cell-based architecture search.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    a = sub.add_parser("apply", help="apply a classical morphological operator to an image")
    a.add_argument("--op", required=True, choices=sorted(M.OPERATORS))
    a.add_argument("--se", required=True, help="structuring element, e.g. disk:3, square:1, cross:2")
    a.add_argument("--in", dest="input", required=True, help="input image (.pgm or .mten)")
    a.add_argument("--out", dest="output", required=True, help="output image (.pgm or .mten)")
    a.set_defaults(func=cmd_apply)

    lc = sub.add_parser("layer-check", help="oracle-collapse and gradient checks of a pseudo layer")
    lc.add_argument("--variant", required=True, choices=VARIANTS)
    lc.add_argument("--seed", type=int, default=None)
    lc.add_argument("--tol", type=float, default=1e-4, help="relative gradient-check tolerance")
    lc.add_argument("--points", type=int, default=20, help="random points for the gradient check")
    lc.set_defaults(func=cmd_layer_check)

    s = sub.add_parser("search", help="run a desk-scale architecture search")
    s.add_argument("--space", required=True, choices=[n for n in SEARCH_SPACES if n != "upsc"])
    s.add_argument("--backbone", required=True, choices=BACKBONES)
    s.add_argument("--config", default=None, help="key = value config file")
    s.add_argument("--out-dir", default="search_out")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--jobs", type=int, default=None, help="parallel candidate trainings")
    s.set_defaults(func=cmd_search)

    ee = sub.add_parser("edge-eval", help="score probability maps against ground-truth edges")
    ee.add_argument("--pred-dir", required=True)
    ee.add_argument("--gt-dir", required=True)
    ee.add_argument("--nms", action="store_true", help="thin predictions before thresholding")
    ee.add_argument("--d-max", type=float, default=None, help="match tolerance in pixels (default 0.0075 x diagonal)")
    ee.add_argument("--out-dir", default="edge_eval")
    ee.set_defaults(func=cmd_edge_eval)

    er = sub.add_parser("edge-run", help="run an edge detector on a dataset and score it")
    er.add_argument("--model", required=True, help="checkpoint directory or 'classical-gradient'")
    er.add_argument("--data", required=True)
    er.add_argument("--split", default="test", choices=("train", "val", "test"))
    er.add_argument("--seed", type=int, default=None)
    er.add_argument("--nms", action="store_true")
    er.add_argument("--out-dir", default="edge_run")
    er.set_defaults(func=cmd_edge_run)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (C.ConfigError, ValueError, OSError, io.FormatError, RuntimeError) as exc:
        print(f"morph: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
