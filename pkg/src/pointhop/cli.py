"""Command-line interface.

Every failure is reported on stderr as ``ERROR:<kind>:<message>`` with a
non-zero exit code. Set ``PH2_LOG`` to error, info or debug for diagnostics.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import synthetic
from .classifier import evaluate, fit_llsr, predict
from .config import RunConfig, load_config
from .errors import InvalidInput, PointHopError
from .io import Dataset, load_model, load_xyz_dir, read_xyz, save_model, train_val_split, write_xyz_dir
from .pipeline import fit_model, model_features, predict_model, prepare_all
from .ranking import rank_features
from .saab import cross_correlation, normalized_correlation
from .geometry import PointCloud

log = logging.getLogger("pointhop")


def _values(text, cast=float):
    if not text:
        return []
    return [cast(v) for v in text.split(",") if v.strip()]


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _require(value, flag):
    if not value:
        raise InvalidInput(f"{flag} is required")
    return value


def _load(cfg: RunConfig, split: str) -> Dataset:
    return load_xyz_dir(_require(cfg.data, "--data"), split)


# ---------------------------------------------------------------------------
# Commands


def cmd_fit(cfg: RunConfig, args) -> int:
    out = _require(cfg.model or cfg.out, "--model")
    start = time.perf_counter()
    data = _load(cfg, "train")
    load_time = time.perf_counter() - start
    model, report, _ = fit_model(data.clouds, data.labels, data.class_names, cfg, args.threads)
    checksum = save_model(model, out)
    tree = model.tree
    print(f"clouds = {len(data)}")
    print(f"classes = {data.num_classes}")
    print(f"nodes = {len(tree.nodes)}")
    print(f"leaf_count = {len(tree.leaves)}")
    print(f"leaf_energy_sum = {sum(n.energy for n in tree.leaves):.6f}")
    print(f"feature_dim = {tree.feature_dim}")
    print(f"filter_parameters = {tree.parameter_count()}")
    print(f"filter_megabytes = {8 * tree.parameter_count() / 1e6:.6f}")
    print(f"train_accuracy = {_fmt(report.train_accuracy)}")
    print(f"time_load = {load_time:.3f}s")
    for phase, secs in report.timings.items():
        print(f"time_{phase} = {secs:.3f}s")
    print(f"time_total = {time.perf_counter() - start:.3f}s")
    print(f"model = {out}")
    print(f"sha256 = {checksum}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    data = load_xyz_dir(_require(cfg.data, "--data"), args.split, model.class_names)
    start = time.perf_counter()
    pred = predict_model(model, data.clouds, args.threads)
    elapsed = time.perf_counter() - start
    result = evaluate(pred, data.labels, len(model.class_names))
    print(f"split = {args.split}")
    print(f"samples = {len(data)}")
    print(f"overall_accuracy = {_fmt(result.overall_accuracy)}")
    print(f"class_avg_accuracy = {_fmt(result.class_avg_accuracy)}")
    print(f"inference_ms_per_cloud = {1000 * elapsed / max(len(data), 1):.2f}")
    if cfg.out:
        rows = [[name] + list(map(int, row)) for name, row in zip(model.class_names, result.confusion)]
        _write_csv(cfg.out, ["true\\pred"] + model.class_names, rows)
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    if args.inputs:
        paths = list(args.inputs)
        clouds = [PointCloud(read_xyz(p)) for p in paths]
    else:
        data = load_xyz_dir(_require(cfg.data, "--data"), args.split, model.class_names)
        paths, clouds = data.paths, data.clouds
    pred = predict_model(model, clouds, args.threads)
    rows = [[p, int(c), model.class_names[c]] for p, c in zip(paths, pred)]
    if cfg.out:
        _write_csv(cfg.out, ["path", "label", "class_name"], rows)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(["path", "label", "class_name"])
        writer.writerows(rows)
    return 0


def _split_train(cfg: RunConfig, data: Dataset):
    tr, va = train_val_split(data.labels, cfg.val_fraction, cfg.seed)
    if va.size == 0:
        raise InvalidInput("the validation split is empty; raise val_fraction")
    return data.subset(tr), data.subset(va)


def cmd_sweep_threshold(cfg: RunConfig, args) -> int:
    thresholds = _values(args.values) or [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]
    out = _require(cfg.out, "--out")
    train, val = _split_train(cfg, _load(cfg, "train"))
    base = RunConfig(**{**vars(cfg), "energy_threshold": min(thresholds), "ranking": "none", "ensemble": False})
    model, _, _ = fit_model(train.clouds, train.labels, train.class_names, base, args.threads)
    full = model.tree
    pre = model.preprocessing
    tr_clouds = prepare_all(train.clouds, pre)
    va_clouds = prepare_all(val.clouds, pre)
    rows = []
    for t in thresholds:
        tree = full.prune(t)
        ftr = tree.transform_many(tr_clouds, seed=pre.seed, threads=args.threads)
        fva = tree.transform_many(va_clouds, seed=pre.seed, threads=args.threads)
        clf = fit_llsr(ftr, train.labels, train.num_classes, cfg.standardize, cfg.ridge)
        tr_acc = float((predict(clf, ftr) == train.labels).mean())
        va_acc = float((predict(clf, fva) == val.labels).mean())
        log.info("T=%g leaves=%d train=%.4f val=%.4f", t, len(tree.leaves), tr_acc, va_acc)
        rows.append([repr(float(t)), _fmt(tr_acc), _fmt(va_acc)])
    _write_csv(out, ["T", "train_acc", "val_acc"], rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_sweep_features(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    out = _require(cfg.out, "--out")
    train, val = _split_train(cfg, load_xyz_dir(_require(cfg.data, "--data"), "train", model.class_names))
    ftr = model_features(model, train.clouds, args.threads)
    fva = model_features(model, val.clouds, args.threads)
    counts = [int(m) for m in _values(args.values)] or sorted({
        max(1, round(ftr.shape[1] * f)) for f in (0.01, 0.05, 0.1, 0.25, 0.5, 1.0)
    })
    modes = ["cross_entropy", "energy"] if args.mode == "both" else [args.mode]
    ranking = rank_features(ftr, train.labels, train.num_classes, model.tree.feature_energies(),
                            cfg.num_bins, cfg.ce_variant)
    rows = []
    for m in counts:
        if not 0 < m <= ftr.shape[1]:
            raise InvalidInput(f"feature count {m} out of range 1..{ftr.shape[1]}")
        for mode in modes:
            cols = ranking.select(mode, m)
            clf = fit_llsr(ftr[:, cols], train.labels, train.num_classes, cfg.standardize, cfg.ridge)
            tr_acc = float((predict(clf, ftr[:, cols]) == train.labels).mean())
            va_acc = float((predict(clf, fva[:, cols]) == val.labels).mean())
            rows.append([m, mode, _fmt(tr_acc), _fmt(va_acc)])
    _write_csv(out, ["m", "mode", "train_acc", "val_acc"], rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cmd_bench_density(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    out = _require(cfg.out, "--out")
    data = load_xyz_dir(_require(cfg.data, "--data"), args.split, model.class_names)
    sizes = [int(s) for s in _values(args.values)] or [1024, 768, 512, 256]
    rows = []
    for size in sizes:
        clouds = prepare_all(data.clouds, model.preprocessing, size)
        pred = predict_model(model, clouds, args.threads, prepared=True)
        res = evaluate(pred, data.labels, len(model.class_names))
        print(f"points = {size} overall_accuracy = {_fmt(res.overall_accuracy)} "
              f"class_avg_accuracy = {_fmt(res.class_avg_accuracy)}")
        rows.append([size, _fmt(res.overall_accuracy), _fmt(res.class_avg_accuracy)])
    _write_csv(out, ["size", "overall_acc", "class_avg_acc"], rows)
    return 0


def cmd_rank(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    out = _require(cfg.out, "--out")
    sel = model.selection
    if sel is not None and sel.ranking is not None:
        ranking = sel.ranking
    else:
        data = load_xyz_dir(_require(cfg.data, "--data"), "train", model.class_names)
        feats = model_features(model, data.clouds, args.threads)
        ranking = rank_features(feats, data.labels, data.num_classes, model.tree.feature_energies(),
                                cfg.num_bins, cfg.ce_variant)
    rank_ce = ranking.ranks("cross_entropy")
    rank_e = ranking.ranks("energy")
    rows = [
        [leaf, agg, repr(float(ranking.energy[j])), repr(float(ranking.cross_entropy[j])), rank_ce[j], rank_e[j]]
        for j, (leaf, agg) in enumerate(model.tree.feature_provenance)
    ]
    _write_csv(out, ["node_id", "aggregation", "energy", "cross_entropy", "rank_ce", "rank_energy"], rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def hop0_correlation(model, clouds, threads: int = 1) -> np.ndarray:
    """Coefficient correlation matrix of the root bank over every hop-0 point."""
    prepared = prepare_all(clouds, model.preprocessing)
    coeffs = np.vstack([model.tree.hop0_coefficients(c, model.preprocessing.seed) for c in prepared])
    return cross_correlation(coeffs)


def cmd_report_correlation(cfg: RunConfig, args) -> int:
    model = load_model(_require(cfg.model, "--model"))
    out = _require(cfg.out, "--out")
    data = load_xyz_dir(_require(cfg.data, "--data"), args.split, model.class_names)
    corr = hop0_correlation(model, data.clouds, args.threads)
    d = corr.shape[0]
    names = ["DC"] + [f"AC{i}" for i in range(1, d)]
    _write_csv(out, ["channel"] + names, [[n] + [repr(float(v)) for v in row] for n, row in zip(names, corr)])
    ac = corr[1:, 1:]
    off = np.abs(ac - np.diag(np.diag(ac))).max() if d > 2 else 0.0
    norm = np.abs(normalized_correlation(corr))
    print(f"dimension = {d}")
    print(f"max_ac_ac_offdiag_over_max_diag = {off / np.abs(np.diag(corr)).max():.3e}")
    print(f"max_normalized_dc_ac = {norm[0, 1:].max():.3e}")
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    root = _require(cfg.out or cfg.data, "--out")
    for split, count, seed in (("train", args.train_per_class, cfg.seed), ("test", args.test_per_class, cfg.seed + 1)):
        clouds = synthetic.make_dataset(count, args.points, seed=seed, noise=args.noise)
        write_xyz_dir(root, Dataset(clouds, list(synthetic.SHAPES), split))
    print(f"wrote synthetic dataset to {root}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "sweep-threshold": cmd_sweep_threshold,
    "sweep-features": cmd_sweep_features,
    "bench-density": cmd_bench_density,
    "report-correlation": cmd_report_correlation,
    "rank": cmd_rank,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--data", help="dataset root with <split>/<class>/<sample>.xyz")
    common.add_argument("--model", help="model container path")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="random seed (non-negative)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--split", default="test", help="dataset split for eval/predict/bench")

    parser = argparse.ArgumentParser(prog="pointhop", description="Point-cloud classification by hop cascades")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("sweep-threshold", "sweep-features", "bench-density"):
            p.add_argument("--values", help="comma-separated thresholds / feature counts / point counts")
        if name == "sweep-features":
            p.add_argument("--mode", choices=["cross_entropy", "energy", "both"], default="both")
        if name == "predict":
            p.add_argument("inputs", nargs="*", help=".xyz files (default: the --split of --data)")
        if name == "synth":
            p.add_argument("--train-per-class", type=int, default=100)
            p.add_argument("--test-per-class", type=int, default=50)
            p.add_argument("--points", type=int, default=1024)
            p.add_argument("--noise", type=float, default=0.01)
    return parser


def _setup_logging():
    level = os.environ.get("PH2_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s:%(name)s:%(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        overrides = list(args.set)
        for key in ("data", "model", "out", "seed"):
            value = getattr(args, key)
            if value is not None:
                overrides.append(f"{key}={value}")
        cfg = load_config(args.config, overrides)
        if args.threads < 1:
            raise InvalidInput("--threads must be >= 1")
        # One BLAS thread keeps floating-point results independent of --threads.
        with threadpool_limits(limits=1):
            return COMMANDS[args.command](cfg, args)
    except PointHopError as exc:
        print(f"ERROR:{exc.kind}:{exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"ERROR:io:{exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"ERROR:internal:{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
