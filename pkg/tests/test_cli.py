import csv
import json

import numpy as np
import pytest

from turbqkd.cli import EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_OK, main

SMALL_RUN = """
[run]
seed = 3
[synth]
days = 10
[windows]
stride = 60
[model]
hidden_sizes = 4
[train]
max_epochs = 2
micro_batch = 32
initial_lr = 0.003
[pfi]
subset = 40
[qkd]
grid_n = 128
n_realizations = 2
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "run.ini").write_text(SMALL_RUN)
    assert run("synth", "--config", root / "run.ini", "--out-dir", root / "raw") == EXIT_OK
    assert run("ingest", "--config", root / "run.ini", "--out-dir", root / "data",
               "--weather", root / "raw/weather.csv", "--scint", root / "raw/scint.csv") == EXIT_OK
    assert run("train", "--config", root / "run.ini", "--out-dir", root / "model",
               "--dataset", root / "data/aligned.csv") == EXIT_OK
    return root


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_synth_and_ingest_outputs(workdir):
    manifest = json.loads((workdir / "raw/synth_manifest.json").read_text())
    assert manifest["daily_min"] == -16.0 and manifest["daily_max"] == -14.0
    summary = json.loads((workdir / "data/gap_summary.json").read_text())
    assert 10 * 1440 - 120 <= summary["minutes"] <= 10 * 1440
    ingest = json.loads((workdir / "data/ingest_manifest.json").read_text())
    assert ingest["outputs"] == ["aligned.csv", "gap_summary.json"]
    assert len(ingest["config_hash"]) == 64


def test_train_writes_history_and_resumes(workdir):
    rows = read_csv(workdir / "model/history.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1]
    assert run("train", "--config", workdir / "run.ini", "--out-dir", workdir / "resumed",
               "--dataset", workdir / "data/aligned.csv", "--resume", workdir / "model/model.ckpt") == EXIT_OK
    rows = read_csv(workdir / "resumed/history.csv")
    assert [int(r["epoch"]) for r in rows] == [0, 1, 2, 3]


def test_train_is_byte_identical_across_workers(workdir):
    for workers, name in ((1, "w1"), (3, "w3")):
        assert run("train", "--config", workdir / "run.ini", "--out-dir", workdir / name, "--workers", workers,
                   "--dataset", workdir / "data/aligned.csv") == EXIT_OK
    for f in ("model.ckpt", "history.csv", "train_manifest.json"):
        assert (workdir / "w1" / f).read_bytes() == (workdir / "w3" / f).read_bytes()
    assert (workdir / "w1/model.ckpt").read_bytes() == (workdir / "model/model.ckpt").read_bytes()


def test_predict_six_hours(workdir):
    assert run("predict", "--config", workdir / "run.ini", "--out-dir", workdir / "pred",
               "--model", workdir / "model/model.ckpt", "--dataset", workdir / "data/aligned.csv",
               "--start", "2023-07-05T12:00:00Z", "--horizon", 6) == EXIT_OK
    rows = read_csv(workdir / "pred/forecast.csv")
    assert len(rows) == 24


def test_predict_without_history_fails(workdir):
    code = run("predict", "--config", workdir / "run.ini", "--out-dir", workdir / "pred_bad",
               "--model", workdir / "model/model.ckpt", "--dataset", workdir / "data/aligned.csv",
               "--start", "2023-07-01T03:00:00Z")
    assert code == EXIT_DATA


def test_evaluate_and_pfi(workdir):
    assert run("evaluate", "--config", workdir / "run.ini", "--out-dir", workdir / "eval",
               "--model", workdir / "model/model.ckpt", "--dataset", workdir / "data/aligned.csv",
               "--split", "validation") == EXIT_OK
    body = json.loads((workdir / "eval/evaluation.json").read_text())
    assert body["model"]["mean_rmse"] > 0 and body["persistence"]["mean_rmse"] > 0
    assert run("pfi", "--config", workdir / "run.ini", "--out-dir", workdir / "pfi",
               "--model", workdir / "model/model.ckpt", "--dataset", workdir / "data/aligned.csv") == EXIT_OK
    rows = read_csv(workdir / "pfi/importance.csv")
    names = [r["feature_or_group"] for r in rows]
    assert "log10_cn2" in names and "meteo" in names
    assert all(float(r["importance_mean"]) > 0 for r in rows)


def test_qkd_table_and_dumps(workdir):
    out = workdir / "qkd"
    assert run("qkd", "--config", workdir / "run.ini", "--out-dir", out) == EXIT_OK
    rows = read_csv(out / "qkd_table.csv")
    assert len(rows) == 10
    assert {r["basis"] for r in rows} == {"OAM", "ANGLE"}
    m = np.loadtxt(out / "matrices/oam_cn2_1e-16.csv", delimiter=",")
    assert np.allclose(m.sum(axis=1), 1.0)
    assert (out / "worst/oam_cn2_1e-16_screen.csv").exists()
    assert (out / "worst/angle_cn2_1e-16_mode7_re.csv").exists()


def test_qkd_single_level_is_reproducible(workdir):
    for name in ("a", "b"):
        assert run("qkd", "--config", workdir / "run.ini", "--out-dir", workdir / f"qkd_{name}",
                   "--levels", "1e-15", "--bases", "oam") == EXIT_OK
    a, b = workdir / "qkd_a", workdir / "qkd_b"
    assert len(read_csv(a / "qkd_table.csv")) == 1
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_exit_codes(workdir, tmp_path):
    ini = workdir / "run.ini"
    assert run("train", "--config", ini, "--out-dir", tmp_path, "--dataset", tmp_path / "missing.csv") == EXIT_IO
    assert run("evaluate", "--config", ini, "--out-dir", tmp_path, "--model", tmp_path / "none.ckpt",
               "--dataset", workdir / "data/aligned.csv") == EXIT_IO
    bad = tmp_path / "bad.ini"
    bad.write_text("[windows]\nsplit_mode = Z\n")
    assert run("train", "--config", bad, "--out-dir", tmp_path, "--dataset", workdir / "data/aligned.csv") == EXIT_CONFIG
    bad.write_text("[train]\nepochs = 3\n")
    assert run("synth", "--config", bad, "--out-dir", tmp_path) == EXIT_CONFIG
    assert run("ingest", "--out-dir", tmp_path) == EXIT_CONFIG
    assert run("frobnicate") == EXIT_CONFIG
    assert run("qkd", "--out-dir", tmp_path, "--workers", 0) == EXIT_CONFIG
