"""Tests for application settings and configuration schemas."""

import pytest
from pydantic import ValidationError

from config import Config, ModelConfig, SyntheticSpec, TrainOptions


def test_validate_config():
    ok, message = Config.validate_config()
    assert ok, message


def test_model_config_defaults():
    config = ModelConfig()
    assert (config.hidden_layers, config.num_inducing, config.lag) == (2, 30, 5)
    assert config.recognition_window == "previous"


@pytest.mark.parametrize("field", ["hidden_layers", "lag", "input_lag", "num_inducing"])
def test_model_config_rejects_zero(field):
    with pytest.raises(ValidationError):
        ModelConfig(**{field: 0})


def test_train_options_validation():
    with pytest.raises(ValidationError):
        TrainOptions(max_evals=0)
    with pytest.raises(ValidationError):
        TrainOptions(restarts=0)


def test_synthetic_hold_range():
    with pytest.raises(ValidationError):
        SyntheticSpec(hold_min=5, hold_max=2)
