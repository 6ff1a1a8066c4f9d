"""
GP-NARX baseline for the recurrent GP toolkit.
A full GP on observed-output regressors trained by evidence maximization,
simulated by feeding back point predictions.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from scipy import linalg

from config import Config, TrainOptions
from kernel import KernelParams, cross_gram, kernel_grads
from rgp_model import default_ard
from trainer import TrainTrace, fit_objective
from utils import LOG_2PI, StructuralError, chol_inverse, jitter_cholesky

logger = logging.getLogger(__name__)


def narx_regressors(u: np.ndarray, y: np.ndarray, lag: int, input_lag: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Rows [y_{t-1}, ..., y_{t-L}, u_{t-1}, ..., u_{t-Lu}] and targets y_t for t >= max(L, Lu).

    Args:
        u (np.ndarray): Input sequence
        y (np.ndarray): Output sequence
        lag (int): Output lag L
        input_lag (int): Input lag Lu

    Returns:
        Tuple[np.ndarray, np.ndarray]: Regressors and targets
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.shape != y.shape:
        raise StructuralError(f"u and y differ in length ({u.shape[0]} vs {y.shape[0]})")
    p = max(lag, input_lag)
    if y.shape[0] <= p + 1:
        raise StructuralError(f"sequence of length {y.shape[0]} too short for lags ({lag}, {input_lag})")
    times = np.arange(p, y.shape[0])[:, None]
    X = np.hstack([y[times - np.arange(1, lag + 1)], u[times - np.arange(1, input_lag + 1)]])
    return X, y[p:]


@dataclass
class GpNarxModel:
    """Fitted baseline with the cached factor of K + σ²I."""

    kernel: KernelParams
    noise_variance: float
    X: np.ndarray
    targets: np.ndarray
    lag: int
    input_lag: int
    chol: np.ndarray = field(repr=False, default=None)
    alpha: np.ndarray = field(repr=False, default=None)
    evidence: float = float("nan")
    trace: Optional[TrainTrace] = field(repr=False, default=None)

    def __post_init__(self):
        if self.X.shape[1] != self.lag + self.input_lag:
            raise StructuralError("regressor dimension must equal lag + input_lag")
        if self.chol is None:
            Ky = cross_gram(self.X, self.X, self.kernel) + self.noise_variance * np.eye(self.X.shape[0])
            self.chol, _ = jitter_cholesky(Ky, self.kernel.signal_variance, start=0.0, context="GP-NARX K")
            self.alpha = linalg.cho_solve((self.chol, True), self.targets)

    @property
    def start(self) -> int:
        return max(self.lag, self.input_lag)


def _params_from_log(theta: np.ndarray) -> Tuple[KernelParams, float]:
    return KernelParams(float(np.exp(theta[0])), np.exp(theta[1:-1])), float(np.exp(theta[-1]))


def evidence(X: np.ndarray, targets: np.ndarray, kernel: KernelParams, noise_variance: float) -> float:
    """log N(targets | 0, K + σ²I)."""
    Ky = cross_gram(X, X, kernel) + noise_variance * np.eye(X.shape[0])
    L, _ = jitter_cholesky(Ky, kernel.signal_variance, start=0.0, context="GP-NARX K")
    alpha = linalg.cho_solve((L, True), targets)
    return float(-0.5 * targets @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * targets.shape[0] * LOG_2PI)


def evidence_grads(X: np.ndarray, targets: np.ndarray, theta: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Log evidence and its gradient w.r.t. the log parameters.

    ``theta`` is [log sf2, log w_1^2, ..., log w_D^2, log σ²].
    """
    kernel, noise = _params_from_log(theta)
    Ky = cross_gram(X, X, kernel) + noise * np.eye(X.shape[0])
    L, _ = jitter_cholesky(Ky, kernel.signal_variance, start=0.0, context="GP-NARX K")
    alpha = linalg.cho_solve((L, True), targets)
    value = float(-0.5 * targets @ alpha - np.sum(np.log(np.diag(L)))
                  - 0.5 * targets.shape[0] * LOG_2PI)
    W = np.outer(alpha, alpha) - chol_inverse(L)
    g = kernel_grads(X, X, kernel, 0.5 * W)
    grad = np.concatenate([[g.signal_variance * kernel.signal_variance],
                           g.ard_weights * kernel.ard_weights,
                           [0.5 * float(np.trace(W)) * noise]])
    return value, grad


class GpNarxObjective:
    """Log evidence over log hyperparameters, in the trainer's objective interface."""

    name = "gpnarx"

    def __init__(self, u: np.ndarray, y: np.ndarray, lag: int, input_lag: int):
        self.lag, self.input_lag = lag, input_lag
        self.X, self.targets = narx_regressors(u, y, lag, input_lag)

    def initial_vector(self, seed: int, kernel_jitter: float = 0.0) -> np.ndarray:
        dim = self.X.shape[1]
        theta = np.concatenate([[np.log(Config.INIT_SIGNAL_VARIANCE)], np.log(default_ard(dim)),
                                [np.log(Config.INIT_NOISE_VARIANCE)]])
        if kernel_jitter > 0:
            rng = np.random.default_rng(seed)
            theta[:-1] += kernel_jitter * rng.standard_normal(dim + 1)
        return theta

    def value_and_grad(self, theta: np.ndarray) -> Tuple[float, np.ndarray]:
        return evidence_grads(self.X, self.targets, theta)

    def blocks(self) -> Dict[str, np.ndarray]:
        dim = self.X.shape[1]
        return {"signal_variance": np.array([0]), "ard_weights": np.arange(1, dim + 1),
                "noise_variance": np.array([dim + 1])}

    def frozen_in_warmup(self) -> np.ndarray:
        return np.zeros(0, dtype=int)

    def to_model(self, theta: np.ndarray) -> GpNarxModel:
        kernel, noise = _params_from_log(theta)
        return GpNarxModel(kernel=kernel, noise_variance=noise, X=self.X, targets=self.targets,
                           lag=self.lag, input_lag=self.input_lag)


def fit_gpnarx(u: np.ndarray, y: np.ndarray, lag: int, input_lag: int,
               opts: Optional[TrainOptions] = None) -> GpNarxModel:
    """
    Fit the baseline by maximizing the log evidence with the trainer's optimizer.

    Args:
        u (np.ndarray): Normalized inputs
        y (np.ndarray): Normalized outputs
        lag (int): Output lag L
        input_lag (int): Input lag Lu
        opts (Optional[TrainOptions]): Budget, restarts and seed

    Returns:
        GpNarxModel: Fitted model carrying its evidence and training trace
    """
    opts = opts or TrainOptions()
    objective = GpNarxObjective(u, y, lag, input_lag)
    # no variational variances to freeze
    result = fit_objective(objective, opts.model_copy(update={"fixed_variances_phase": 0}))
    model = objective.to_model(result.vector)
    model.evidence = result.bound
    model.trace = result.trace
    logger.info("GP-NARX fitted: log evidence %.6f, noise variance %.3e",
                result.bound, model.noise_variance)
    return model


def predict_gpnarx(model: GpNarxModel, x: np.ndarray,
                   include_noise: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """
    Predictive mean and variance at deterministic regressors.

    Args:
        model (GpNarxModel): Fitted model
        x (np.ndarray): One regressor or a matrix of rows
        include_noise (bool): Add σ² for the observed-output variance

    Returns:
        Tuple[np.ndarray, np.ndarray]: Means and variances, one per row
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    Ks = cross_gram(x, model.X, model.kernel)
    mean = Ks @ model.alpha
    v = linalg.solve_triangular(model.chol, Ks.T, lower=True)
    variance = np.maximum(model.kernel.signal_variance - np.sum(v ** 2, axis=0), 0.0)
    if include_noise:
        variance = variance + model.noise_variance
    return mean, variance


def simulate_gpnarx(model: GpNarxModel, u_test: np.ndarray,
                    seed_window: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Free simulation feeding predicted means back into the output lags.

    Args:
        model (GpNarxModel): Fitted model
        u_test (np.ndarray): Input sequence of length T
        seed_window (np.ndarray): First max(L, Lu) true outputs

    Returns:
        Tuple[np.ndarray, np.ndarray]: Means and observed-output variances for steps p..T-1
    """
    u_test = np.asarray(u_test, dtype=float).ravel()
    p = model.start
    seed_window = np.asarray(seed_window, dtype=float).ravel()
    if seed_window.shape[0] != p:
        raise StructuralError(f"seed window of length {seed_window.shape[0]}, expected {p}")
    T = u_test.shape[0]
    if T <= p:
        raise StructuralError(f"test sequence of length {T} is not longer than the lags")
    history = np.concatenate([seed_window, np.zeros(T - p)])
    variances = np.zeros(T - p)
    for t in range(p, T):
        x = np.concatenate([history[t - np.arange(1, model.lag + 1)],
                            u_test[t - np.arange(1, model.input_lag + 1)]])
        mean, var = predict_gpnarx(model, x, include_noise=True)
        history[t] = mean[0]
        variances[t - p] = var[0]
    return history[p:], variances
