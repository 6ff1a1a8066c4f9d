"""Shared fixtures: small normalized sequences and perturbed model states."""

import numpy as np
import pytest

from config import ModelConfig, SyntheticSpec
from datasets import generate_synthetic, normalize
from rgp_model import init_model, pack, parameter_blocks, unpack


def synthetic_sequence(n: int, seed: int = 0):
    """Normalized (u, y) of length n from the default synthetic system."""
    train, test = generate_synthetic(SyntheticSpec(noise_std=0.05), seed, n, 2)
    train, _, _ = normalize(train, test)
    return train.u, train.y


def perturbed_state(config: ModelConfig, u, y, seed: int = 0, scale: float = 0.1):
    """A model state away from its initialization in every block."""
    rng = np.random.default_rng(seed)
    state = init_model(config, u, y, seed=seed, kernel_jitter=0.3)
    vector = pack(state)
    blocks = parameter_blocks(config, state.num_points)
    vector[blocks["means"]] += scale * rng.standard_normal(len(blocks["means"]))
    vector[blocks["variances"]] += scale * rng.standard_normal(len(blocks["variances"]))
    vector[blocks["prior_means"]] += scale * rng.standard_normal(len(blocks["prior_means"]))
    vector[blocks["inducing"]] += scale * rng.standard_normal(len(blocks["inducing"]))
    return unpack(vector, config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return ModelConfig(hidden_layers=2, lag=2, input_lag=2, num_inducing=5)


@pytest.fixture
def tiny_data():
    return synthetic_sequence(25, seed=3)


@pytest.fixture
def tiny_state(tiny_config, tiny_data):
    u, y = tiny_data
    return perturbed_state(tiny_config, u, y, seed=5)
