import csv
import json

import numpy as np
import pytest

from treecert.cli import EXIT_PARSE, EXIT_TRAINING, EXIT_USAGE, main
from treecert.data import Dataset, write_dataset
from treecert.models import StumpEnsemble, TreeEnsemble, load_model


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 10, (60, 3))
    y = np.where(X[:, 0] + X[:, 1] > 10, 1.0, -1.0)
    y[:5] *= -1
    path = tmp_path / "toy.txt"
    write_dataset(Dataset(X, y), path)
    return path


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def train(tmp_path, dataset, *extra, name="m.json"):
    out = tmp_path / name
    code = main(["train", "--data", str(dataset), "--scale", "--out", str(out), *extra])
    return code, out


def test_train_and_verify_stumps(tmp_path, dataset, capsys):
    code, model_path = train(tmp_path, dataset, "--norm", "l1", "--eps", "0.1", "--rounds", "3")
    assert code == 0
    model = load_model(model_path)
    assert isinstance(model, StumpEnsemble) and len(model) == 3
    log_rows = read_csv(str(model_path) + ".log.csv")
    assert [r["round"] for r in log_rows] == ["1", "2", "3"]

    capsys.readouterr()
    out = tmp_path / "v.csv"
    code = main(["verify", "--data", str(dataset), "--scale", "--model", str(model_path), "--out", str(out), "--method", "lp-dp", "--norm", "l1", "--eps", "0.1"])
    assert code == 0
    rows = read_csv(out)
    assert len(rows) == 60 and list(rows[0]) == ["sample_index", "label", "clean_pred", "margin_lb", "robust", "time_ms"]
    printed = json.loads(capsys.readouterr().out)
    summary = json.loads((tmp_path / "v.summary.json").read_text())
    assert printed["verified_err"] == summary["verified_err"]
    assert summary["verified_err"] >= summary["standard_err"]


def test_zero_rounds_gives_empty_model(tmp_path, dataset):
    code, model_path = train(tmp_path, dataset, "--rounds", "0")
    assert code == 0
    assert len(load_model(model_path)) == 0


def test_zero_radius_verified_equals_standard(tmp_path, dataset):
    _, model_path = train(tmp_path, dataset, "--rounds", "4")
    for method, norm in (("lp-dp", "l2"), ("linf-exact", "linf"), ("lp-exact", "l1"), ("l0-exact", "l0"), ("tree-multilevel", "l1")):
        out = tmp_path / f"{method}.csv"
        assert main(["verify", "--data", str(dataset), "--scale", "--model", str(model_path), "--out", str(out), "--method", method, "--norm", norm, "--eps", "0"]) == 0
        s = json.loads(out.with_suffix(".summary.json").read_text())
        assert s["verified_err"] == s["standard_err"]


def test_trees_and_parallel_verify(tmp_path, dataset):
    code, model_path = train(tmp_path, dataset, "--kind", "trees", "--depth", "2", "--rounds", "2", "--norm", "linf", "--eps", "0.05")
    assert code == 0
    assert isinstance(load_model(model_path), TreeEnsemble)
    results = []
    for jobs in ("1", "2"):
        out = tmp_path / f"j{jobs}.csv"
        args = ["verify", "--data", str(dataset), "--scale", "--model", str(model_path), "--out", str(out)]
        assert main(args + ["--method", "tree-multilevel", "--norm", "linf", "--eps", "0.05", "--jobs", jobs]) == 0
        results.append([r["margin_lb"] for r in read_csv(out)])
    assert results[0] == results[1]


def test_report_merges_and_flags(tmp_path, dataset, capsys):
    _, model_path = train(tmp_path, dataset, "--rounds", "3", "--norm", "linf", "--eps", "0.05")
    runs = tmp_path / "runs"
    runs.mkdir()
    for eps in ("0", "0.05", "0.2"):
        main(["verify", "--data", str(dataset), "--scale", "--model", str(model_path), "--out", str(runs / f"e{eps}.csv"), "--method", "linf-exact", "--norm", "linf", "--eps", eps])
    merged = tmp_path / "all.csv"
    assert main(["report", str(runs), "--out", str(merged)]) == 0
    rows = read_csv(merged)
    assert [float(r["epsilon"]) for r in rows] == [0.0, 0.05, 0.2]
    assert all(r["monotone_in_eps"] == "1" for r in rows)
    errs = [float(r["verified_err"]) for r in rows]
    assert errs == sorted(errs)


def test_split_flags(tmp_path, dataset):
    _, model_path = train(tmp_path, dataset, "--rounds", "1", "--test-fraction", "0.25", "--split", "train", "--stratify")
    out = tmp_path / "t.csv"
    main(["verify", "--data", str(dataset), "--scale", "--test-fraction", "0.25", "--split", "test", "--model", str(model_path), "--out", str(out), "--method", "linf-exact", "--norm", "linf", "--eps", "0.1"])
    assert len(read_csv(out)) == 15


def test_exit_codes(tmp_path, dataset):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "x.json"), "--eps", "-1"]) == EXIT_USAGE
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "x.json"), "--lr", "2"]) == EXIT_USAGE
    bad = tmp_path / "bad.txt"
    bad.write_text("1 1:1\nzz\n")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "x.json")]) == EXIT_PARSE
    assert main(["train", "--data", str(tmp_path / "missing.txt"), "--out", str(tmp_path / "x.json")]) == EXIT_PARSE
    const = tmp_path / "const.txt"
    const.write_text("1 1:1\n-1 1:1\n")
    assert main(["train", "--data", str(const), "--out", str(tmp_path / "x.json"), "--rounds", "1"]) == EXIT_TRAINING

    _, model_path = train(tmp_path, dataset, "--rounds", "1")
    verify = ["verify", "--data", str(dataset), "--model", str(model_path), "--out", str(tmp_path / "v.csv")]
    # norm / method mismatch
    assert main(verify + ["--method", "linf-exact", "--norm", "l1", "--eps", "0.1"]) == EXIT_USAGE
    assert main(verify + ["--method", "l0-exact", "--norm", "l0", "--eps", "1.5"]) == EXIT_USAGE
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    assert main(["verify", "--data", str(dataset), "--model", str(broken), "--out", str(tmp_path / "v.csv"), "--method", "lp-dp", "--norm", "l1", "--eps", "0.1"]) == EXIT_PARSE
    wide = tmp_path / "wide.txt"
    wide.write_text("1 7:1\n")
    assert main(["verify", "--data", str(wide), "--model", str(model_path), "--out", str(tmp_path / "v.csv"), "--method", "lp-dp", "--norm", "l1", "--eps", "0.1"]) == EXIT_USAGE
