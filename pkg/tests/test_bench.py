"""Tests for experiment configuration, orchestration and report emission."""

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from bench import reference_rmse, run_experiment
from config import DatasetSource, ExperimentConfig, ModelConfig, SyntheticSpec, TrainOptions
from predictor import rmse


def _small_experiment(models, **source):
    source = source or {"synthetic": SyntheticSpec(noise_std=0.05), "n_train": 60, "n_test": 40}
    return ExperimentConfig(
        datasets=[DatasetSource(name="toy", **source)],
        model=ModelConfig(hidden_layers=1, lag=2, input_lag=2, num_inducing=8),
        train=TrainOptions(max_evals=25),
        models=models,
        seed=3,
    )


class TestExperimentConfig:

    def test_digest_stable_under_reserialization(self):
        config = _small_experiment(["revarb", "gpnarx"])
        again = ExperimentConfig.model_validate_json(config.canonical_json())
        assert again.digest() == config.digest()
        assert len(config.digest()) == 12

    def test_digest_changes_with_content(self):
        assert _small_experiment(["revarb"]).digest() != _small_experiment(["gpnarx"]).digest()

    def test_source_needs_exactly_one_origin(self):
        with pytest.raises(ValidationError):
            DatasetSource(name="x")
        with pytest.raises(ValidationError):
            DatasetSource(name="x", csv_path="a.csv", synthetic=SyntheticSpec())

    def test_unknown_model_rejected(self):
        with pytest.raises(ValidationError):
            _small_experiment(["lstm"])

    def test_reference_values(self):
        synthetic = DatasetSource(name="toy", synthetic=SyntheticSpec())
        assert reference_rmse(synthetic, "revarb") == 0.4513
        assert reference_rmse(synthetic, "gpnarx") == 1.9245
        assert reference_rmse(DatasetSource(name="Drives", csv_path="d.csv"), "revarb+recognition") == 0.2491
        assert reference_rmse(DatasetSource(name="other", csv_path="o.csv"), "revarb") is None


class TestRunExperiment:

    def test_failed_dataset_recorded_per_model(self, tmp_path):
        config = _small_experiment(["revarb", "gpnarx"], csv_path=str(tmp_path / "absent.csv"))
        rows = run_experiment(config, tmp_path / "out")
        assert len(rows) == 2
        assert all(r.status == "failed" for r in rows)
        report = pd.read_csv(tmp_path / "out" / "report.csv")
        assert len(report) == 2

    @pytest.mark.slow
    def test_smoke_run(self, tmp_path):
        config = _small_experiment(["revarb", "gpnarx"])
        rows = run_experiment(config, tmp_path)
        assert [r.model for r in rows] == ["revarb", "gpnarx"]
        assert all(r.status == "ok" for r in rows), [r.error for r in rows]
        assert all(np.isfinite(r.rmse) and r.rmse >= 0 for r in rows)
        assert all(r.config_digest == config.digest() for r in rows)

        report = pd.read_csv(tmp_path / "report.csv")
        assert len(report) == len(config.models) * len(config.datasets)
        for row in rows:
            cell = tmp_path / "toy" / row.model
            predictions = pd.read_csv(cell / "predictions.csv")
            assert rmse(predictions["mean"], predictions["y_true"]) == pytest.approx(row.rmse, rel=1e-12)
            assert (cell / "trace.csv").exists()
        assert (tmp_path / "toy" / "revarb" / "model.json").exists()
        assert (tmp_path / "toy" / "revarb" / "layers.csv").exists()

    @pytest.mark.slow
    def test_reproducible(self, tmp_path):
        config = _small_experiment(["revarb", "gpnarx"])
        first = run_experiment(config, tmp_path / "a")
        second = run_experiment(config, tmp_path / "b")
        assert [(r.rmse, r.bound) for r in first] == [(r.rmse, r.bound) for r in second]

    @pytest.mark.slow
    def test_two_layer_revarb_beats_narx_baseline(self, tmp_path):
        config = ExperimentConfig(
            datasets=[DatasetSource(name="toy", synthetic=SyntheticSpec(), n_train=300, n_test=300)],
            model=ModelConfig(hidden_layers=2, lag=2, input_lag=2, num_inducing=30),
            train=TrainOptions(max_evals=1500),
            models=["revarb", "gpnarx"],
            seed=7,
        )
        revarb, narx = run_experiment(config, tmp_path)
        assert revarb.status == narx.status == "ok"
        assert revarb.rmse < narx.rmse
