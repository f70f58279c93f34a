import csv
import subprocess
import sys

import numpy as np
import pytest

from conftest import TOY_OVERRIDES
from pointhop.cli import main
from pointhop.config import RunConfig, load_config, parse_assignments
from pointhop.errors import InvalidInput
from pointhop.io import load_model


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def kv(text):
    return dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)


@pytest.fixture(scope="module")
def toy_model(toy_dataset_dir, tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "toy.ph2"
    code = main(["fit", "--data", str(toy_dataset_dir), "--model", str(path), "--threads", "1", *TOY_OVERRIDES])
    assert code == 0
    return path


# -- config ----------------------------------------------------------------------


def test_config_file_and_overrides(tmp_path):
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("# comment\nenergy_threshold = 0.01\nk_per_hop = 8,8,8,8\nensemble = yes\n\n")
    cfg = load_config(cfg_path, ["energy_threshold=0.05", "ranking = energy"])
    assert cfg.energy_threshold == 0.05
    assert cfg.k_per_hop == (8, 8, 8, 8)
    assert cfg.ensemble is True
    assert cfg.ranking == "energy"
    assert cfg.tree_config().energy_threshold == 0.05


def test_config_round_trips_through_text(tmp_path):
    cfg = load_config(None, ["aggregations=mean,l2", "seed=7", "num_bins=16"])
    path = tmp_path / "again.cfg"
    path.write_text(cfg.to_text())
    assert load_config(path) == cfg


@pytest.mark.parametrize(
    "line",
    ["bogus = 1", "num_bins = many", "ensemble = perhaps", "ranking = random", "seed = -1", "energy_threshold = 2"],
)
def test_config_rejects(line):
    with pytest.raises(InvalidInput):
        load_config(None, [line])


def test_config_line_without_equals(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("num_bins 4\n")
    with pytest.raises(InvalidInput, match="bad.cfg:1"):
        load_config(path)
    assert parse_assignments(["a = b = c"]) == [("a", "b = c")]


def test_defaults_match_tree_defaults():
    from pointhop.tree import TreeConfig

    assert RunConfig().tree_config() == TreeConfig()


# -- commands ----------------------------------------------------------------------


def test_fit_reports(toy_dataset_dir, tmp_path, capsys):
    path = tmp_path / "m.ph2"
    code, out, _ = run(capsys, "fit", "--data", toy_dataset_dir, "--model", path, *TOY_OVERRIDES)
    assert code == 0 and path.exists()
    info = kv(out)
    assert info["leaf_energy_sum"] == "1.000000"
    model = load_model(path)
    assert int(info["leaf_count"]) == len(model.tree.leaves)
    assert int(info["filter_parameters"]) == model.tree.parameter_count()
    assert info["sha256"] == (tmp_path / "m.ph2.manifest").read_text().split("sha256 = ")[1].strip()
    assert any(k.startswith("time_") for k in info)


def test_fit_threshold_one(toy_dataset_dir, tmp_path, capsys):
    code, out, _ = run(
        capsys, "fit", "--data", toy_dataset_dir, "--model", tmp_path / "t1.ph2", *TOY_OVERRIDES,
        "--set", "energy_threshold=1.0",
    )
    assert code == 0
    assert kv(out)["leaf_count"] == "24"


def test_fit_deterministic_across_runs_and_threads(toy_dataset_dir, tmp_path, capsys):
    blobs = []
    for i, threads in enumerate((1, 1, 4)):
        path = tmp_path / f"d{i}.ph2"
        code, _, _ = run(capsys, "fit", "--data", toy_dataset_dir, "--model", path, "--threads", threads,
                         "--seed", 3, *TOY_OVERRIDES)
        assert code == 0
        blobs.append(path.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_fit_with_ranking_and_ensemble(toy_dataset_dir, tmp_path, capsys):
    path = tmp_path / "fe.ph2"
    code, out, err = run(
        capsys, "fit", "--data", toy_dataset_dir, "--model", path, *TOY_OVERRIDES,
        "--set", "ranking=cross_entropy", "--set", "num_features=40", "--set", "num_bins=4",
        "--set", "ensemble=true", "--set", "ensemble_rotations=2",
    )
    assert code == 0, err
    model = load_model(path)
    assert len(model.selection.columns) == 40
    assert len(model.classifier.stage1) == 2
    code, out, _ = run(capsys, "eval", "--data", toy_dataset_dir, "--model", path)
    assert code == 0 and float(kv(out)["overall_accuracy"]) >= 0.5


def test_eval_prints_metrics_and_confusion(toy_model, toy_dataset_dir, tmp_path, capsys):
    conf = tmp_path / "confusion.csv"
    code, out, _ = run(capsys, "eval", "--data", toy_dataset_dir, "--model", toy_model, "--out", conf)
    assert code == 0
    info = kv(out)
    rows = read_csv(conf)
    assert rows[0] == ["true\\pred", "cross", "cube", "sphere", "torus"]
    matrix = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
    assert matrix.sum() == int(info["samples"]) == 12
    assert float(info["overall_accuracy"]) == pytest.approx(np.trace(matrix) / matrix.sum(), abs=1e-6)


def test_predict_csv(toy_model, toy_dataset_dir, tmp_path, capsys):
    out_path = tmp_path / "pred.csv"
    code, _, _ = run(capsys, "predict", "--data", toy_dataset_dir, "--model", toy_model, "--out", out_path)
    assert code == 0
    rows = read_csv(out_path)
    assert rows[0] == ["path", "label", "class_name"] and len(rows) == 13
    one = rows[1][0]
    code, out, _ = run(capsys, "predict", "--model", toy_model, one)
    assert code == 0 and out.splitlines()[1] == ",".join(rows[1])


def test_sweep_threshold_single_value(toy_dataset_dir, tmp_path, capsys):
    out_path = tmp_path / "sweep.csv"
    code, _, _ = run(
        capsys, "sweep-threshold", "--data", toy_dataset_dir, "--out", out_path, "--values", "1.0",
        *TOY_OVERRIDES, "--set", "val_fraction=0.34",
    )
    assert code == 0
    lines = out_path.read_text().splitlines()
    assert lines[0] == "T,train_acc,val_acc"
    assert len(lines) == 2 and lines[1].startswith("1.0,")


def test_sweep_features(toy_model, toy_dataset_dir, tmp_path, capsys):
    out_path = tmp_path / "feat.csv"
    code, _, _ = run(
        capsys, "sweep-features", "--data", toy_dataset_dir, "--model", toy_model, "--out", out_path,
        "--values", "4,16", "--set", "val_fraction=0.34", "--set", "num_bins=4",
    )
    assert code == 0
    rows = read_csv(out_path)
    assert rows[0] == ["m", "mode", "train_acc", "val_acc"]
    assert [r[:2] for r in rows[1:]] == [["4", "cross_entropy"], ["4", "energy"], ["16", "cross_entropy"], ["16", "energy"]]


def test_bench_density_baseline_matches_eval(toy_model, toy_dataset_dir, tmp_path, capsys):
    bench = tmp_path / "density.csv"
    code, _, _ = run(capsys, "bench-density", "--data", toy_dataset_dir, "--model", toy_model, "--out", bench,
                     "--values", "200,128,64")
    assert code == 0
    rows = read_csv(bench)
    assert rows[0] == ["size", "overall_acc", "class_avg_acc"] and len(rows) == 4
    _, out, _ = run(capsys, "eval", "--data", toy_dataset_dir, "--model", toy_model)
    info = kv(out)
    assert rows[1][1:] == [info["overall_accuracy"], info["class_avg_accuracy"]]


def test_report_correlation(toy_model, toy_dataset_dir, tmp_path, capsys):
    out_path = tmp_path / "corr.csv"
    code, out, _ = run(capsys, "report-correlation", "--data", toy_dataset_dir, "--split", "train",
                       "--model", toy_model, "--out", out_path)
    assert code == 0
    rows = read_csv(out_path)
    corr = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert corr.shape == (24, 24)
    np.testing.assert_allclose(corr, corr.T, atol=1e-12)
    assert float(kv(out)["max_ac_ac_offdiag_over_max_diag"]) <= 1e-8


def test_rank_csv(toy_model, toy_dataset_dir, tmp_path, capsys):
    out_path = tmp_path / "rank.csv"
    code, _, _ = run(capsys, "rank", "--data", toy_dataset_dir, "--model", toy_model, "--out", out_path,
                     "--set", "num_bins=4")
    assert code == 0
    rows = read_csv(out_path)
    assert rows[0] == ["node_id", "aggregation", "energy", "cross_entropy", "rank_ce", "rank_energy"]
    model = load_model(toy_model)
    assert len(rows) - 1 == model.tree.feature_dim
    assert sorted(int(r[4]) for r in rows[1:]) == list(range(1, model.tree.feature_dim + 1))


def test_commands_are_repeatable(toy_model, toy_dataset_dir, tmp_path, capsys):
    outs = []
    for i in range(2):
        path = tmp_path / f"bench{i}.csv"
        run(capsys, "bench-density", "--data", toy_dataset_dir, "--model", toy_model, "--out", path,
            "--values", "128", "--threads", 1 + 2 * i)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize(
    "argv,kind",
    [
        (["fit", "--set", "nope=1"], "invalid_input"),
        (["fit", "--data", "/nonexistent/root", "--model", "x.ph2"], "invalid_input"),
        (["eval", "--data", ".", "--model", "/nonexistent/model.ph2"], "io"),
        (["fit"], "invalid_input"),
    ],
)
def test_errors_are_prefixed(argv, kind, capsys):
    code, _, err = run(capsys, *argv)
    assert code != 0
    assert err.startswith(f"ERROR:{kind}:")


def test_corrupt_model_error(tmp_path, capsys, toy_model, toy_dataset_dir):
    bad = tmp_path / "bad.ph2"
    blob = bytearray(toy_model.read_bytes())
    blob[50] ^= 1
    bad.write_bytes(bytes(blob))
    code, _, err = run(capsys, "eval", "--data", toy_dataset_dir, "--model", bad)
    assert code != 0 and err.startswith("ERROR:corrupt_model:")


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "pointhop", "fit", "--set", "bogus=1"], capture_output=True, text=True
    )
    assert proc.returncode != 0
    assert proc.stderr.startswith("ERROR:invalid_input:")
