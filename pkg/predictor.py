"""
Predictor module for the recurrent GP toolkit.
Layer-wise predictive moments at Gaussian regressors, free simulation with
moment propagation through the latent recurrence, and RMSE.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from config import Config
from psi_stats import UncertainInputSet, compute_psi
from revarb_bound import LayerQz, OptimalQz
from rgp_model import ModelState, assemble_regressors, gather_window, layer_sources
from utils import StructuralError

logger = logging.getLogger(__name__)


@dataclass
class PredictiveMoments:
    """
    Moments of every layer at every simulated step.

    ``means``/``variances`` have one column per layer 1..H+1; the last column
    is the latent output function. ``output_variance`` adds the output noise.
    """

    steps: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    output_variance: np.ndarray
    clip_count: int = 0

    @property
    def output_mean(self) -> np.ndarray:
        return self.means[:, -1]

    def __len__(self) -> int:
        return self.steps.shape[0]


def predict_rows(layer: LayerQz, q: UncertainInputSet) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Predictive mean and variance of one layer's function at Gaussian regressors.

    mean = B' Psi1*', variance = B'(Psi2* - Psi1*'Psi1*)B + Psi0*
    - Tr((K_z^-1 - A^-1) Psi2*), evaluated independently for every row.

    Args:
        layer (LayerQz): Optimal q(z) and cached factors of the layer
        q (UncertainInputSet): Regressor rows

    Returns:
        Tuple[np.ndarray, np.ndarray, int]: Means, clipped variances, number clipped
    """
    stats = compute_psi(q, layer.Z, layer.kernel)
    B = layer.B
    mean = stats.psi1 @ B
    variance = (np.einsum("nab,a,b->n", stats.psi2_rows, B, B) - mean ** 2
                + layer.kernel.signal_variance
                - np.einsum("nab,ab->n", stats.psi2_rows, layer.Kinv_minus_Ainv))
    negative = variance < 0
    clipped = int(np.count_nonzero(negative))
    if clipped:
        worst = float(variance.min())
        level = logging.WARNING if worst > -Config.VARIANCE_CLIP_TOL else logging.ERROR
        logger.log(level, "Clipped %d negative predictive variances (min %.3e)", clipped, worst)
        variance = np.where(negative, 0.0, variance)
    return mean, variance, clipped


def predict_step(qz: OptimalQz, h: int, regressor: UncertainInputSet) -> Tuple[float, float]:
    """
    Predictive moments of layer h at a single Gaussian regressor.

    Args:
        qz (OptimalQz): Recovered inducing posteriors
        h (int): Layer index, 1..H+1
        regressor (UncertainInputSet): One row

    Returns:
        Tuple[float, float]: Mean and variance of f^(h)
    """
    if regressor.num_rows != 1:
        raise StructuralError("predict_step takes exactly one regressor row")
    mean, variance, _ = predict_rows(qz.layers[h - 1], regressor)
    return float(mean[0]), float(variance[0])


def free_simulate(state: ModelState, qz: OptimalQz, u_test: np.ndarray,
                  init: Optional[np.ndarray] = None,
                  propagate_variance: bool = True) -> PredictiveMoments:
    """
    Simulate the model from exogenous inputs only, propagating moments.

    The first L latent values of every hidden layer come from ``init`` (an
    H x L array of means, zero variance) or, by default, the trained initial
    priors. Each later step feeds the predicted (mean, variance) of every
    layer into the next windows; observed inputs stay deterministic.

    Args:
        state (ModelState): Trained parameters
        qz (OptimalQz): Recovered inducing posteriors of the same state
        u_test (np.ndarray): Normalized input sequence
        init (Optional[np.ndarray]): Seed latent means, H x L
        propagate_variance (bool): False propagates means only

    Returns:
        PredictiveMoments: Moments for steps L..T-1
    """
    cfg = state.config
    H, L = cfg.hidden_layers, cfg.lag
    u_test = np.asarray(u_test, dtype=float).ravel()
    T = u_test.shape[0]
    if T <= max(L, cfg.input_lag):
        raise StructuralError(
            f"test sequence of length {T} is not longer than the lags ({L}, {cfg.input_lag})")

    means = np.zeros((H, T))
    variances = np.zeros((H, T))
    if init is None:
        means[:, :L] = state.variational.prior_means
        if propagate_variance:
            variances[:, :L] = state.variational.prior_variances
    else:
        init = np.asarray(init, dtype=float).reshape(H, L)
        means[:, :L] = init

    steps = np.arange(L, T)
    out_mean = np.zeros((steps.shape[0], H + 1))
    out_var = np.zeros((steps.shape[0], H + 1))
    clip_count = 0
    for k, t in enumerate(steps):
        for h in range(1, H + 2):
            src_layer, src_time = layer_sources(h, np.array([t]), cfg)
            q = gather_window(src_layer, src_time, means, variances, u_test)
            m, v, clipped = predict_rows(qz.layers[h - 1], q)
            clip_count += clipped
            out_mean[k, h - 1], out_var[k, h - 1] = m[0], v[0]
            if h <= H:
                means[h - 1, t] = m[0]
                variances[h - 1, t] = v[0] if propagate_variance else 0.0

    if clip_count:
        logger.warning("Free simulation clipped %d variances", clip_count)
    noise = state.layers[-1].noise_variance
    return PredictiveMoments(steps=steps, means=out_mean, variances=out_var,
                             output_variance=out_var[:, -1] + noise, clip_count=clip_count)


def one_step_ahead(state: ModelState, qz: OptimalQz, u: np.ndarray) -> PredictiveMoments:
    """
    Output predictions from the training posterior windows (teacher-forced latents).

    Args:
        state (ModelState): Trained parameters
        qz (OptimalQz): Recovered inducing posteriors
        u (np.ndarray): Normalized training inputs

    Returns:
        PredictiveMoments: Output-layer moments for steps L..N-1
    """
    H = state.config.hidden_layers
    q = assemble_regressors(H + 1, state, u)
    mean, variance, clipped = predict_rows(qz.layers[H], q)
    steps = np.arange(state.config.lag, state.num_points)
    means = np.zeros((steps.shape[0], H + 1))
    variances = np.zeros((steps.shape[0], H + 1))
    means[:, H], variances[:, H] = mean, variance
    return PredictiveMoments(steps=steps, means=means, variances=variances,
                             output_variance=variance + state.layers[-1].noise_variance,
                             clip_count=clipped)


def rmse(predicted: np.ndarray, y_true: np.ndarray) -> float:
    """
    Root mean squared error.

    Args:
        predicted (np.ndarray): Predicted means
        y_true (np.ndarray): Observed values, same length

    Returns:
        float: RMSE
    """
    predicted = np.asarray(predicted, dtype=float).ravel()
    y_true = np.asarray(y_true, dtype=float).ravel()
    if predicted.shape != y_true.shape:
        raise StructuralError(
            f"rmse got {predicted.shape[0]} predictions for {y_true.shape[0]} observations")
    return float(np.sqrt(np.mean((predicted - y_true) ** 2)))


def write_predictions(path: str, steps: np.ndarray, mean: np.ndarray, variance: np.ndarray,
                      y_true: np.ndarray) -> Path:
    """Write step, predicted mean, predicted variance and true output as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"step": np.asarray(steps, dtype=int), "mean": mean,
                          "variance": variance, "y_true": y_true})
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_layer_trajectories(path: str, moments: PredictiveMoments) -> Path:
    """Write the simulated moments of every layer in long format (step, layer, mean, variance)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    num_layers = moments.means.shape[1]
    frame = pd.DataFrame({
        "step": np.repeat(moments.steps, num_layers),
        "layer": np.tile(np.arange(1, num_layers + 1), len(moments)),
        "mean": moments.means.ravel(),
        "variance": moments.variances.ravel(),
    })
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
