"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The synthetic benchmark (4 shapes, 100 train / 50 test per class, 1024
points, noise 0.01) is generated and fitted once per module through the CLI
and shared by the classification, ranking, density and determinism checks.
"""

import csv
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import cross_entropy_naive, saab_dense
from pointhop.cli import hop0_correlation, main
from pointhop.io import load_model, load_xyz_dir
from pointhop.pipeline import prepare_all
from pointhop.ranking import cross_entropy_score, partition_1d
from pointhop.saab import fit_saab, normalized_correlation


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    assert code == 0, err
    return dict(line.split(" = ", 1) for line in out.splitlines() if " = " in line)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    """Synthetic dataset on disk plus one single-threaded default fit."""
    root = tmp_path_factory.mktemp("bench")
    data = root / "data"
    assert main(["synth", "--out", str(data), "--seed", "0"]) == 0
    model = root / "model.ph2"
    start = time.perf_counter()
    assert main(["fit", "--data", str(data), "--model", str(model), "--threads", "1"]) == 0
    fit_seconds = time.perf_counter() - start
    return {"root": root, "data": data, "model": model, "fit_seconds": fit_seconds}


# -- 1 ---------------------------------------------------------------------------


def test_criterion_1_saab_matches_dense_oracle():
    r = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(200):
        d = (8, 24)[trial % 2]
        n = int(r.integers(d + 2, 1001))
        x = r.normal(size=(n, d)) @ r.normal(size=(d, d)) * r.uniform(0.1, 10) + r.normal(size=d)
        bank = fit_saab(x)
        _, dc_var, evals, vecs = saab_dense(x)
        scale = max(evals.max(), dc_var)
        worst = max(worst, abs(bank.eigenvalues[0] - dc_var) / scale,
                    np.abs(bank.eigenvalues[1:] - np.maximum(evals, 0)).max() / scale)
        gaps = np.abs(np.diff(np.concatenate([[np.inf], evals, [-np.inf]])))
        for i in range(d - 1):
            if min(gaps[i], gaps[i + 1]) > 1e-6 * scale:
                worst = max(worst, np.abs(bank.ac_weights[i] - vecs[i]).max())
    seconds = time.perf_counter() - start
    verdict(1, worst <= 1e-8 and seconds < 30,
            f"max relative deviation {worst:.2e} (<= 1e-8), runtime {seconds:.1f} s (< 30 s)")


# -- 2 ---------------------------------------------------------------------------


def test_criterion_2_decorrelation(bench):
    model = load_model(bench["model"])
    train = load_xyz_dir(bench["data"], "train", model.class_names)
    test = load_xyz_dir(bench["data"], "test", model.class_names)
    corr = hop0_correlation(model, train.clouds)
    ac = corr[1:, 1:]
    ac_ac = np.abs(ac - np.diag(np.diag(ac))).max() / np.abs(np.diag(corr)).max()
    held = np.abs(normalized_correlation(hop0_correlation(model, test.clouds)))
    dc_ac = held[0, 1:].max()
    verdict(2, ac_ac <= 1e-8 and dc_ac <= 1e-2,
            f"training AC-AC {ac_ac:.2e} x max diagonal (<= 1e-8), "
            f"held-out normalized DC-AC {dc_ac:.2e} (<= 1e-2)")


# -- 3 ---------------------------------------------------------------------------


def test_criterion_3_energy_partition(bench):
    tree = load_model(bench["model"]).tree
    leaf_sum = sum(n.energy for n in tree.leaves)
    children = {}
    for n in tree.nodes:
        children.setdefault(n.parent_id, []).append(n.energy)
    parents = {-1: 1.0, **{n.node_id: n.energy for n in tree.nodes}}
    bank_err = max(abs(sum(e) - parents[p]) for p, e in children.items())
    verdict(3, abs(leaf_sum - 1) <= 1e-9 and bank_err <= 1e-12,
            f"leaf energy sum off by {abs(leaf_sum - 1):.1e} (<= 1e-9), "
            f"worst bank child sum off by {bank_err:.1e} (<= 1e-12)")


# -- 4 ---------------------------------------------------------------------------


def test_criterion_4_permutation_invariance(bench):
    model = load_model(bench["model"])
    test = load_xyz_dir(bench["data"], "test", model.class_names)
    clouds = prepare_all(test.clouds, model.preprocessing)
    r = np.random.default_rng(99)
    worst = 0.0
    for trial in range(100):
        cloud = clouds[int(r.integers(len(clouds)))]
        perm = cloud.with_points(cloud.points[r.permutation(len(cloud))])
        a = model.tree.transform(cloud, model.preprocessing.seed).values
        b = model.tree.transform(perm, model.preprocessing.seed).values
        worst = max(worst, float(np.abs(a - b).max()))
    verdict(4, worst <= 1e-9, f"max feature difference over 100 permutations {worst:.1e} (<= 1e-9)")


# -- 5 ---------------------------------------------------------------------------


def test_criterion_5_synthetic_classification(bench, capsys):
    info = run_cli(capsys, "eval", "--data", bench["data"], "--model", bench["model"], "--threads", 1)
    overall = float(info["overall_accuracy"])
    class_avg = float(info["class_avg_accuracy"])
    seconds = bench["fit_seconds"]
    verdict(5, overall >= 0.95 and class_avg >= 0.93 and seconds < 300,
            f"overall {overall:.4f} (>= 0.95), class-avg {class_avg:.4f} (>= 0.93), "
            f"single-threaded fit {seconds:.0f} s (< 300 s)")


# -- 6 ---------------------------------------------------------------------------


def test_criterion_6_cross_entropy_selection(bench, capsys):
    dim = load_model(bench["model"]).tree.feature_dim
    m = max(1, round(0.25 * dim))
    out = bench["root"] / "features.csv"
    run_cli(capsys, "sweep-features", "--data", bench["data"], "--model", bench["model"], "--out", out,
            "--values", m, "--mode", "both", "--threads", 1)
    acc = {row["mode"]: float(row["val_acc"]) for row in read_rows(out)}
    ce, energy = acc["cross_entropy"], acc["energy"]
    verdict(6, ce >= energy - 0.01,
            f"top {m} of {dim} features: cross-entropy val {ce:.4f} >= energy val {energy:.4f} - 0.01")


# -- 7 ---------------------------------------------------------------------------


def test_criterion_7_density_robustness(bench, capsys):
    out = bench["root"] / "density.csv"
    run_cli(capsys, "bench-density", "--data", bench["data"], "--model", bench["model"], "--out", out,
            "--values", "1024,256", "--threads", 1)
    acc = {int(row["size"]): float(row["overall_acc"]) for row in read_rows(out)}
    drop = acc[1024] - acc[256]
    verdict(7, drop <= 0.10,
            f"accuracy {acc[1024]:.4f} at 1024 points, {acc[256]:.4f} at 256, drop {100 * drop:.1f} points (<= 10)")


# -- 8 ---------------------------------------------------------------------------


def test_criterion_8_deterministic_fit(bench):
    again = bench["root"] / "again.ph2"
    assert main(["fit", "--data", str(bench["data"]), "--model", str(again), "--threads", "1"]) == 0
    same = again.read_bytes() == bench["model"].read_bytes()
    verdict(8, same, f"two fits with seed 0 produce {'identical' if same else 'different'} containers")


# -- 9 ---------------------------------------------------------------------------


@pytest.mark.slow
@pytest.mark.skipif(
    os.environ.get("PH2_RUN_SLOW") != "1" or not os.environ.get("PH2_MODELNET_ROOT"),
    reason="set PH2_RUN_SLOW=1 and PH2_MODELNET_ROOT to run the ModelNet40 recipe",
)
def test_criterion_9_modelnet_recipe(tmp_path, capsys):
    root = os.environ["PH2_MODELNET_ROOT"]
    model = tmp_path / "modelnet.ph2"
    run_cli(capsys, "fit", "--data", root, "--model", model)
    info = run_cli(capsys, "eval", "--data", root, "--model", model)
    overall = float(info["overall_accuracy"])
    verdict(9, abs(overall - 0.903) <= 0.010, f"ModelNet40 baseline overall {overall:.4f} (0.903 +/- 0.010)")


# -- 10 --------------------------------------------------------------------------


def test_criterion_10_cross_entropy_examples():
    r = np.random.default_rng(10)
    sep_values = np.concatenate([r.uniform(-0.05, 0.05, 50), 1 + r.uniform(-0.05, 0.05, 50)])
    separated = cross_entropy_score(sep_values, np.repeat([0, 1], 50), 2, num_bins=2)

    independent = cross_entropy_score(r.normal(size=2000), r.integers(0, 2, 2000), 2, num_bins=32)

    values = np.array([0.0, 0.1, 0.2, 10.0, 10.1])
    labels = np.array([0, 0, 1, 1, 1])
    mixed = cross_entropy_score(values, labels, 2, num_bins=2)
    hand = (2 * -math.log(2 / 3) + 1 * -math.log(1 / 3)) / 5
    assign, _ = partition_1d(values, 2)
    naive = cross_entropy_naive(assign, labels, 2)

    ok = (abs(separated) <= 1e-9 and abs(independent - math.log(2)) <= 0.05
          and abs(mixed - hand) <= 1e-9 and abs(mixed - naive) <= 1e-9)
    verdict(10, ok,
            f"separating {separated:.1e} (0 +/- 1e-9), independent {independent:.4f} (ln 2 +/- 0.05), "
            f"mixed bin {mixed:.6f} vs hand {hand:.6f} (+/- 1e-9)")
