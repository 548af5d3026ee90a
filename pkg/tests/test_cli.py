import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from vtlandmarks.cli import EXIT_FAIL, EXIT_IO, EXIT_OK, EXIT_USAGE, main
from vtlandmarks.dataset import load_corpus
from vtlandmarks.evaluation import REPORT_FILES
from vtlandmarks.pgm import write_pgm

TINY = json.dumps({"branch1": 2, "branch2": 2, "l4": 4, "l5": 4, "l6": 4})
TRAIN_FAST = ["--max-epochs", "1", "--filters", TINY, "--sigma", "3", "--batch-size", "4"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--subjects", "2", "--articulations", "3", "--size", "24", "--seed", "7",
                 "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def model_dir(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("model")
    assert main(["train", "--manifest", str(synth_dir / "manifest.json"), "--seed", "1", "--out", str(out),
                 *TRAIN_FAST]) == EXIT_OK
    return out


def files_bytes(directory, names):
    return {n: (directory / n).read_bytes() for n in names}


def test_synth_counts_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["synth", "--subjects", "9", "--articulations", "12", "--size", "32", "--seed", "7",
                     "--out", str(d)]) == EXIT_OK
    corpus = load_corpus(a / "manifest.json")
    assert len(corpus) == 108
    names = ["manifest.json"] + [f"images/{s.sample_id}.pgm" for s in corpus]
    assert files_bytes(a, names) == files_bytes(b, names)
    run_a, run_b = (json.loads((d / "run.json").read_text()) for d in (a, b))
    assert run_a.pop("out") != run_b.pop("out")  # only the output path differs
    assert run_a == run_b
    assert run_a["seed"] == 7 and run_a["command"] == "synth"


def test_synth_rejects_zero_articulations(capsys):
    assert main(["synth", "--articulations", "0"]) == EXIT_USAGE
    assert "--articulations" in capsys.readouterr().err


def test_synth_failure_exit_code(tmp_path, capsys):
    # huge articulation spread keeps pushing landmarks out of a tiny frame
    assert main(["synth", "--subjects", "2", "--articulations", "2", "--size", "32", "--seed", "1",
                 "--articulation-amplitude", "40", "--out", str(tmp_path)]) == EXIT_FAIL
    assert "left the frame" in capsys.readouterr().err


def test_augment_counts(synth_dir, tmp_path):
    assert main(["augment", "--manifest", str(synth_dir / "manifest.json"), "--seed", "0",
                 "--out", str(tmp_path / "all")]) == EXIT_OK
    assert len(load_corpus(tmp_path / "all" / "manifest.json")) == 66
    assert main(["augment", "--manifest", str(synth_dir / "manifest.json"), "--augment-ops", "3,5",
                 "--out", str(tmp_path / "two")]) == EXIT_OK
    assert len(load_corpus(tmp_path / "two" / "manifest.json")) == 18


def test_augment_missing_manifest_is_io_error(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main(["augment", "--manifest", str(missing)]) == EXIT_IO
    assert str(missing) in capsys.readouterr().err


def test_augment_bad_op_ids(synth_dir):
    assert main(["augment", "--manifest", str(synth_dir / "manifest.json"), "--augment-ops", "0,11"]) == EXIT_USAGE


def test_train_outputs(model_dir):
    names = sorted(p.name for p in model_dir.iterdir())
    assert names == [f"group{k}.vtlm" for k in range(1, 6)] + ["model.json", "run.json"]
    sidecar = json.loads((model_dir / "model.json").read_text())
    assert sidecar["architecture"] == "flatnet"
    assert sidecar["dilation_rates"] == [1, 2, 4, 8, 16]
    assert len(sidecar["networks"][0]["history"]["val_loss"]) == 1


def test_train_convonly_single_file(synth_dir, tmp_path):
    assert main(["train", "--manifest", str(synth_dir / "manifest.json"), "--seed", "1", "--arch", "convonly",
                 "--filters", json.dumps({"hidden": [2] * 5}), "--max-epochs", "1", "--out", str(tmp_path)]) == 0
    assert sorted(p.name for p in tmp_path.glob("*.vtlm")) == ["group1.vtlm"]


def test_train_usage_errors(synth_dir, capsys):
    manifest = str(synth_dir / "manifest.json")
    assert main(["train", "--manifest", manifest, "--seed", "1", "--max-epochs", "0"]) == EXIT_USAGE
    assert main(["train", "--manifest", manifest]) == EXIT_USAGE
    assert "--seed is required" in capsys.readouterr().err


def test_seed_and_flags_from_config_file(synth_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"train": {"seed": 1, "max_epochs": 5, "filters": json.loads(TINY), "sigma": 3}}))
    out = tmp_path / "m"
    assert main(["--config", str(cfg), "train", "--manifest", str(synth_dir / "manifest.json"),
                 "--max-epochs", "1", "--out", str(out)]) == EXIT_OK
    run = json.loads((out / "run.json").read_text())
    assert run["seed"] == 1 and run["max_epochs"] == 1  # the flag wins over the file


def test_output_root_from_environment(synth_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("VTLM_OUTPUT_ROOT", str(tmp_path))
    assert main(["augment", "--manifest", str(synth_dir / "manifest.json"), "--augment-ops", "3"]) == EXIT_OK
    assert (tmp_path / "augment" / "manifest.json").is_file()


def test_predict_csv_and_heatmaps(model_dir, synth_dir, tmp_path):
    image = synth_dir / "images" / "S01_A01.pgm"
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(model_dir), "--image", str(image), "--out", str(out),
                 "--emit-heatmaps"]) == EXIT_OK
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["landmark_id", "x", "y", "degenerate"]
    assert len(rows) == 22
    assert len(list((tmp_path / "heatmaps").glob("S01_A01_*.pgm"))) == 21


def test_predict_size_mismatch_names_dims(model_dir, tmp_path, capsys):
    img = tmp_path / "big.pgm"
    write_pgm(img, np.zeros((30, 30), np.uint8))
    assert main(["predict", "--model", str(model_dir), "--image", str(img), "--out", str(tmp_path / "p.csv")]) \
        == EXIT_USAGE
    assert "24x24" in capsys.readouterr().err


def test_eval_cv_emits_report_files(synth_dir, tmp_path):
    out = tmp_path / "cv"
    assert main(["eval", "--manifest", str(synth_dir / "manifest.json"), "--scheme", "cv", "--k", "3",
                 "--seed", "2", "--out", str(out), *TRAIN_FAST]) == EXIT_OK
    for name in REPORT_FILES:
        assert (out / name).is_file()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["scheme"] == "cv" and summary["meta"]["k"] == 3


def test_eval_loso_two_subjects_with_baseline(synth_dir, tmp_path):
    out = tmp_path / "loso"
    assert main(["eval", "--manifest", str(synth_dir / "manifest.json"), "--scheme", "loso",
                 "--augment-ops", "3", "--seed", "2", "--baseline", "convonly",
                 "--baseline-filters", json.dumps({"hidden": [2] * 5}), "--out", str(out), *TRAIN_FAST]) == 0
    rows = (out / "rmse_per_subject.csv").read_text().splitlines()
    assert rows[0] == "subject,flatnet_loso,convonly_loso"
    assert len(rows) == 3
    summary = json.loads((out / "summary.json").read_text())
    assert "convonly" in summary["ttests"]


def test_eval_unknown_scheme(synth_dir, capsys):
    assert main(["eval", "--manifest", str(synth_dir / "manifest.json"), "--scheme", "losoco",
                 "--seed", "1"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "cv" in err and "loso" in err


def test_train_and_eval_reproducible(synth_dir, tmp_path):
    manifest = str(synth_dir / "manifest.json")
    for tag in ("a", "b"):
        assert main(["train", "--manifest", manifest, "--seed", "5", "--out", str(tmp_path / f"m{tag}"),
                     *TRAIN_FAST]) == 0
        assert main(["eval", "--manifest", manifest, "--scheme", "loso", "--augment-ops", "4", "--seed", "5",
                     "--jobs", "1", "--out", str(tmp_path / f"e{tag}"), *TRAIN_FAST]) == 0
    model_files = [f"group{k}.vtlm" for k in range(1, 6)] + ["model.json"]
    assert files_bytes(tmp_path / "ma", model_files) == files_bytes(tmp_path / "mb", model_files)
    assert files_bytes(tmp_path / "ea", REPORT_FILES) == files_bytes(tmp_path / "eb", REPORT_FILES)


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "flatnet_group_16x16" in out and "overall" in out and "FAIL" not in out


def test_installed_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "vtlandmarks.cli", "synth", "--articulations", "0"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert proc.stdout == ""
