"""Tests for the command-line entry point."""

import json

import pandas as pd

from app import main


def test_generate_writes_splits(tmp_path):
    code = main(["generate", "--out-dir", str(tmp_path), "--n-train", "30", "--n-test", "20"])
    assert code == 0
    assert len(pd.read_csv(tmp_path / "train.csv")) == 30
    assert len(pd.read_csv(tmp_path / "test.csv")) == 20


def test_train_then_simulate(tmp_path):
    main(["generate", "--out-dir", str(tmp_path), "--n-train", "40", "--n-test", "20"])
    code = main(["train", "--data", str(tmp_path / "train.csv"), "--out-dir", str(tmp_path / "m"),
                 "--layers", "1", "--lag", "2", "--input-lag", "2", "--inducing", "6",
                 "--max-evals", "15"])
    assert code == 0
    document = json.loads((tmp_path / "m" / "model.json").read_text())
    assert document["format_version"] == 1
    code = main(["simulate", "--model-file", str(tmp_path / "m" / "model.json"),
                 "--data", str(tmp_path / "test.csv"), "--out-dir", str(tmp_path / "s")])
    assert code == 0
    predictions = pd.read_csv(tmp_path / "s" / "predictions.csv")
    assert len(predictions) == 18


def test_gradcheck_passes(tmp_path):
    code = main(["gradcheck", "--layers", "2", "--lag", "2", "--input-lag", "2", "--inducing", "5",
                 "--n-train", "20"])
    assert code == 0


def test_missing_data_exits_with_one(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "absent.csv"), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "absent.csv" in capsys.readouterr().err


def test_invalid_structure_exits_with_two(tmp_path):
    main(["generate", "--out-dir", str(tmp_path), "--n-train", "30", "--n-test", "20"])
    code = main(["train", "--data", str(tmp_path / "train.csv"), "--layers", "0",
                 "--out-dir", str(tmp_path)])
    assert code == 2


def test_recognition_model_simulates(tmp_path):
    main(["generate", "--out-dir", str(tmp_path), "--n-train", "40", "--n-test", "20"])
    code = main(["train", "--data", str(tmp_path / "train.csv"), "--out-dir", str(tmp_path / "m"),
                 "--layers", "1", "--lag", "2", "--input-lag", "2", "--inducing", "6",
                 "--max-evals", "15", "--recognition"])
    assert code == 0
    document = json.loads((tmp_path / "m" / "model.json").read_text())
    assert document["recognition"] is not None
    code = main(["simulate", "--model-file", str(tmp_path / "m" / "model.json"),
                 "--data", str(tmp_path / "test.csv"), "--out-dir", str(tmp_path / "s")])
    assert code == 0
    assert len(pd.read_csv(tmp_path / "s" / "predictions.csv")) == 18
