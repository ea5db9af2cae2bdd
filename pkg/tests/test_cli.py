from __future__ import annotations

import csv
import json
import re
import subprocess
import sys

import numpy as np
import pytest

from kdunloc.cli import build_parser, main
from kdunloc.dataset import SplitMode, SplitSpec, load_cmu, remove_outliers, select_users, split, subsample, write_csv


@pytest.fixture(scope="module")
def files(tmp_path_factory, surrogate):
    d = tmp_path_factory.mktemp("cli")
    users = remove_outliers(select_users(surrogate, 4, 12))
    sub = subsample(users, 50, 12, "random", 0.8)
    tr, te = split(sub, SplitSpec(0.8, SplitMode.RANDOM, 12))
    write_csv(tr, d / "train.csv")
    write_csv(te, d / "test.csv")
    return d


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def accuracy(stdout):
    return float(re.search(r"accuracy vs\. file labels: ([\d.]+)%", stdout).group(1))


def test_parser_has_subcommands():
    p = build_parser()
    for cmd in ("ingest", "train", "identify", "experiment"):
        assert p.parse_args([cmd] if cmd != "identify" else [cmd, "m.json"]).command == cmd


def test_ingest(files, tmp_path, capsys):
    code, out, _ = run(["ingest", files / "train.csv", "--out", tmp_path], capsys)
    assert code == 0
    assert out.startswith("4 users, 40 samples/user, 31 features")
    assert load_cmu(tmp_path / "dataset.csv").same_as(load_cmu(files / "train.csv"))


def test_ingest_full_surrogate_summary(tmp_path, surrogate, capsys):
    write_csv(surrogate, tmp_path / "all.csv")
    code, out, _ = run(["ingest", tmp_path / "all.csv", "--out", tmp_path / "o"], capsys)
    assert code == 0 and out.splitlines()[0] == "51 users, 400 samples/user, 31 features"


def test_ingest_errors(tmp_path, files, capsys):
    code, _, err = run(["ingest", tmp_path / "missing.csv", "--out", tmp_path], capsys)
    assert code != 0 and err
    code, _, err = run(["ingest", files / "train.csv", "--format", "generic", "--out", tmp_path], capsys)
    assert code == 2 and "usage error" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("subject,sessionIndex,rep,H.period\ns002,1,1,abc\n")
    code, _, err = run(["ingest", bad, "--out", tmp_path], capsys)
    assert code == 1 and "row" in err.lower()


def test_train_identify_roundtrip(files, tmp_path, capsys):
    code, out, _ = run(["train", files / "train.csv", "--out", tmp_path / "m", "--seed", 0], capsys)
    assert code == 0 and "estimated clusters N = 4" in out
    model = tmp_path / "m" / "model.json"
    assert json.loads(model.read_text())["resolved_config"]["seed"] == 0
    assert (tmp_path / "m" / "summary.txt").read_text().startswith("# config=")

    code, out_tr, _ = run(["identify", model, files / "train.csv", "--out", tmp_path / "tr.csv"], capsys)
    assert code == 0
    code, out_te, _ = run(["identify", model, files / "test.csv", "--out", tmp_path / "te.csv"], capsys)
    assert code == 0
    assert accuracy(out_tr) >= accuracy(out_te)
    rows = list(csv.reader((tmp_path / "te.csv").open()))
    assert rows[0] == ["sample_id", "predicted_cluster", "matched_user", "residual"]
    assert len(rows) == 1 + 40
    assert all(r[3] != "" for r in rows[1:])  # unloc mode records residuals


def test_train_no_quantile_flagged(files, tmp_path, capsys):
    code, out, _ = run(["train", files / "train.csv", "--no-quantile", "--out", tmp_path], capsys)
    assert code == 0 and "raw (no quantile transform)" in out


def test_train_unwritable_out(files, capsys):
    # /proc refuses new entries even for root
    code, _, err = run(["train", files / "train.csv", "--out", "/proc/kdunloc-out"], capsys)
    assert code != 0 and "not writable" in err


def test_train_out_is_a_file(files, tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(["train", files / "train.csv", "--out", blocker], capsys)
    assert code != 0 and err


def test_identify_empty_and_corrupt(files, tmp_path, capsys):
    run(["train", files / "train.csv", "--out", tmp_path / "m"], capsys)
    model = tmp_path / "m" / "model.json"
    header = (files / "test.csv").read_text().splitlines()[0]
    empty = tmp_path / "empty.csv"
    empty.write_text(header + "\n")
    code, _, _ = run(["identify", model, empty, "--out", tmp_path / "e.csv"], capsys)
    assert code == 0
    assert (tmp_path / "e.csv").read_text() == "sample_id,predicted_cluster,matched_user,residual\n"

    broken = tmp_path / "broken.json"
    broken.write_text(model.read_text()[:200])
    code, _, err = run(["identify", broken, files / "test.csv", "--out", tmp_path / "b.csv"], capsys)
    assert code != 0 and err


def test_identify_feature_mismatch(files, tmp_path, capsys):
    run(["train", files / "train.csv", "--out", tmp_path / "m"], capsys)
    other = tmp_path / "narrow.csv"
    lines = (files / "test.csv").read_text().splitlines()
    other.write_text("\n".join(",".join(l.split(",")[:-1]) for l in lines) + "\n")
    code, _, err = run(["identify", tmp_path / "m" / "model.json", other, "--out", tmp_path / "x.csv"], capsys)
    assert code != 0 and "31" in err and "30" in err


def test_config_layering(files, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"pipeline.reducer": "kpca", "seed": 5}))
    code, out, _ = run(["train", files / "train.csv", "--config", cfg, "--seed", 9, "--out", tmp_path / "m"], capsys)
    assert code == 0 and "reducer: kpca" in out
    doc = json.loads((tmp_path / "m" / "model.json").read_text())
    assert doc["resolved_config"]["seed"] == 9
    cfg.write_text(json.dumps({"pipeline.nope": 1}))
    code, _, err = run(["train", files / "train.csv", "--config", cfg, "--out", tmp_path / "m"], capsys)
    assert code == 2 and "nope" in err


def test_experiment_deterministic(files, tmp_path, capsys):
    argv = ["experiment", files / "train.csv", "--trials", 2, "--seed", 7, "--sample-size", 20, "--reducer", "pca"]
    assert run([*argv, "--out", tmp_path / "a"], capsys)[0] == 0
    assert run([*argv, "--out", tmp_path / "b"], capsys)[0] == 0
    for name in ("trials.csv", "summary.json", "table.txt"):
        a, b = (tmp_path / "a" / name).read_bytes(), (tmp_path / "b" / name).read_bytes()
        assert a == b
        assert b'"seed": 7' in a


def test_experiment_table1_preset_shape(files, tmp_path, capsys):
    code, out, _ = run(
        ["experiment", files / "train.csv", "--preset", "table1", "--trials", 1, "--sample-size", 20,
         "--reducer", "pca", "--out", tmp_path],
        capsys,
    )
    assert code == 0
    table = (tmp_path / "table.txt").read_text()
    for method in ("dbscan", "gmm", "xmeans"):
        assert f"Q+pca+{method}" in table and f"raw+pca+{method}" in table
    assert "K=" in table and "ARI=" in table


def test_experiment_skips_exit_zero(tmp_path, surrogate, capsys):
    write_csv(select_users(surrogate.take(surrogate.sessions == 1), 6, 0), tmp_path / "one.csv")
    code, out, _ = run(
        ["experiment", tmp_path / "one.csv", "--trials", 1, "--session-mode", "inter", "--classifier", "nn",
         "--out", tmp_path / "o"],
        capsys,
    )
    assert code == 0 and "1 skipped" in out


def test_entry_point_subprocess(files, tmp_path):
    r = subprocess.run(
        [sys.executable, "-m", "kdunloc.cli", "ingest", str(files / "test.csv"), "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0 and r.stdout.startswith("4 users, 10 samples/user")
