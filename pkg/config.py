"""
Configuration module for the recurrent GP system-identification toolkit.
Contains application defaults, environment overrides and the validated
configuration schemas shared by training, simulation and benchmarking.
"""

import hashlib
import json
import os
from typing import List, Literal, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, model_validator

# Load environment variables
load_dotenv()


class Config:
    """Configuration class containing all application settings."""

    # Runtime Configuration
    SEED = int(os.getenv("RGP_SEED", "0"))
    OUT_DIR = os.getenv("RGP_OUT_DIR", "./results")
    DATA_DIR = os.getenv("RGP_DATA_DIR", "./data")
    LOG_LEVEL = os.getenv("RGP_LOG_LEVEL", "INFO")
    LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"

    # Numerical Configuration
    JITTER_START = 1e-6
    JITTER_MAX = 1e-2
    JITTER_GROWTH = 10.0
    VARIANCE_CLIP_TOL = 1e-8

    # Initialization Policy
    INIT_LATENT_VARIANCE = 0.01
    INIT_PRIOR_VARIANCE = 1.0
    INIT_SIGNAL_VARIANCE = 1.0
    INIT_NOISE_VARIANCE = 0.01
    RECOGNITION_WEIGHT_SCALE = 0.1

    # Desk-scale Defaults
    DEFAULT_LAYERS = 2
    DEFAULT_INDUCING = 30
    DEFAULT_LAG = 5
    DEFAULT_REAL_LAG = 10
    MAX_EVALS = int(os.getenv("RGP_MAX_EVALS", "1000"))

    # Synthetic Benchmark
    SYNTHETIC_DIVERGENCE_LIMIT = 1e6
    SYNTHETIC_TRAIN = 300
    SYNTHETIC_TEST = 300

    # Reference free-simulation RMSE values (REVARB, GP-NARX)
    REFERENCE_RMSE = {
        "artificial": {"revarb": 0.4513, "gpnarx": 1.9245},
        "actuator": {"revarb": 0.3680, "gpnarx": 1.5488},
        "drives": {"revarb": 0.2491, "gpnarx": 0.4128},
    }

    MODEL_FORMAT_VERSION = 1

    @classmethod
    def validate_config(cls):
        """Validate essential configuration."""
        if not cls.JITTER_START < cls.JITTER_MAX:
            return False, "JITTER_START must be smaller than JITTER_MAX"
        if cls.MAX_EVALS <= 0:
            return False, "RGP_MAX_EVALS must be positive"
        return True, "Configuration validated successfully"


class ModelConfig(BaseModel):
    """Structure of a recurrent GP: depth, lags and sparse approximation size."""

    hidden_layers: int = Field(Config.DEFAULT_LAYERS, ge=1)
    lag: int = Field(Config.DEFAULT_LAG, ge=1)
    input_lag: int = Field(Config.DEFAULT_LAG, ge=1)
    num_inducing: int = Field(Config.DEFAULT_INDUCING, ge=1)
    jitter: float = Field(Config.JITTER_START, ge=0.0)
    recognition: bool = False
    recognition_depth: int = Field(1, ge=1)
    recognition_units: int = Field(10, ge=1)
    recognition_window: Literal["previous", "current"] = "previous"

    def layer_dims(self) -> List[int]:
        """Regressor dimension of every layer 1..H+1."""
        hidden = [self.lag + self.input_lag] + [2 * self.lag] * (self.hidden_layers - 1)
        return hidden + [self.lag]


class TrainOptions(BaseModel):
    """Optimizer budget, restarts and the frozen-variance warm-up."""

    max_evals: int = Field(Config.MAX_EVALS, gt=0)
    convergence_tol: float = Field(1e-5, gt=0.0)
    restarts: int = Field(1, ge=1)
    seed: int = Config.SEED
    fixed_variances_phase: Optional[int] = Field(None, ge=0)

    def warmup_evals(self) -> int:
        """Evaluations spent with the latent variances frozen."""
        if self.fixed_variances_phase is None:
            return self.max_evals // 10
        return min(self.fixed_variances_phase, self.max_evals)


class SyntheticSpec(BaseModel):
    """Nonlinear autoregressive benchmark driven by a piecewise-random input."""

    system: Literal["default"] = "default"
    input_amplitude: float = Field(2.0, gt=0.0)
    hold_min: int = Field(1, ge=1)
    hold_max: int = Field(10, ge=1)
    noise_std: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _check_hold(self):
        if self.hold_min > self.hold_max:
            raise ValueError("hold_min must not exceed hold_max")
        return self


class DatasetSource(BaseModel):
    """Either a user CSV split by fraction or a synthetic generator."""

    name: str
    csv_path: Optional[str] = None
    synthetic: Optional[SyntheticSpec] = None
    train_fraction: float = Field(0.5, gt=0.0, lt=1.0)
    n_train: int = Field(Config.SYNTHETIC_TRAIN, ge=2)
    n_test: int = Field(Config.SYNTHETIC_TEST, ge=2)

    @model_validator(mode="after")
    def _check_source(self):
        if (self.csv_path is None) == (self.synthetic is None):
            raise ValueError("exactly one of csv_path and synthetic must be given")
        return self


class ExperimentConfig(BaseModel):
    """A grid of datasets times models sharing one structure and budget."""

    datasets: List[DatasetSource]
    model: ModelConfig = ModelConfig()
    train: TrainOptions = TrainOptions()
    models: List[Literal["revarb", "revarb+recognition", "gpnarx"]] = ["revarb", "gpnarx"]
    seed: int = Config.SEED

    @model_validator(mode="after")
    def _check_grid(self):
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        if not self.models:
            raise ValueError("at least one model is required")
        return self

    def canonical_json(self) -> str:
        """Key-sorted JSON used for hashing and for writing the config back out."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()[:12]
