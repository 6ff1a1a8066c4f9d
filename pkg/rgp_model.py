"""
Model module for the recurrent GP toolkit.
Parameter containers, the latent autoregressive regressor windows, model
initialization, flat parameter vectors and JSON persistence.

Time is indexed from 0 in code. Layer h (1-based, 1..H+1) owns regressor
rows for t = L..N-1:

    h = 1:        [x1_{t-1}, ..., x1_{t-L}, u_{t-1}, ..., u_{t-Lu}]
    1 < h <= H:   [xh_{t-1}, ..., xh_{t-L}, x(h-1)_t, ..., x(h-1)_{t-L+1}]
    h = H + 1:    [xH_t, ..., xH_{t-L+1}]

Exogenous samples before the start of the sequence read as 0 (the
normalized input mean).
"""

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import Config, ModelConfig
from kernel import KernelParams
from psi_stats import UncertainInputSet
from utils import DataError, StructuralError

logger = logging.getLogger(__name__)

EXOGENOUS = -1


@dataclass(frozen=True)
class InducingSet:
    pseudo_inputs: np.ndarray

    @property
    def num_inducing(self) -> int:
        return self.pseudo_inputs.shape[0]


@dataclass(frozen=True)
class LayerParams:
    kernel: KernelParams
    noise_variance: float
    inducing: InducingSet

    def __post_init__(self):
        if not self.noise_variance > 0:
            raise StructuralError("noise_variance must be positive")
        if self.inducing.pseudo_inputs.shape[1] != self.kernel.input_dim:
            raise StructuralError("inducing inputs and kernel disagree on the input dimension")


@dataclass(frozen=True)
class VariationalState:
    """
    Diagonal-Gaussian posteriors q(x_t^(h)) = N(means[h-1, t], variances[h-1, t])
    and the Gaussian priors of the first L latents of every hidden layer.
    """

    means: np.ndarray
    variances: np.ndarray
    prior_means: np.ndarray
    prior_variances: np.ndarray

    def __post_init__(self):
        if self.means.shape != self.variances.shape:
            raise StructuralError("latent means and variances differ in shape")
        if self.prior_means.shape != self.prior_variances.shape:
            raise StructuralError("prior means and variances differ in shape")
        if np.any(self.variances <= 0) or np.any(self.prior_variances <= 0):
            raise StructuralError("latent and prior variances must be positive")


@dataclass(frozen=True)
class ModelState:
    """Immutable snapshot of every trainable quantity of a recurrent GP."""

    config: ModelConfig
    variational: VariationalState
    layers: Tuple[LayerParams, ...]

    @property
    def num_points(self) -> int:
        return self.variational.means.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layers)


def layer_sources(h: int, times: np.ndarray, config: ModelConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Where every regressor entry of layer h comes from.

    Args:
        h (int): Layer index, 1..H+1
        times (np.ndarray): Time indices of the rows
        config (ModelConfig): Model structure

    Returns:
        Tuple[np.ndarray, np.ndarray]: Source layer (0-based hidden layer or
        EXOGENOUS) and source time, both rows x D_h
    """
    H, L = config.hidden_layers, config.lag
    if not 1 <= h <= H + 1:
        raise StructuralError(f"layer index {h} outside 1..{H + 1}")
    times = np.asarray(times, dtype=int)[:, None]
    past = np.arange(1, L + 1)[None, :]
    present = np.arange(0, L)[None, :]
    if h == 1:
        exo = np.arange(1, config.input_lag + 1)[None, :]
        layer = np.hstack([np.zeros((1, L), int), np.full((1, config.input_lag), EXOGENOUS)])
        offset = np.hstack([past, exo])
    elif h <= H:
        layer = np.hstack([np.full((1, L), h - 1), np.full((1, L), h - 2)])
        offset = np.hstack([past, present])
    else:
        layer = np.full((1, L), H - 1)
        offset = present
    src_time = times - offset
    src_layer = np.broadcast_to(layer, src_time.shape).copy()
    return src_layer, src_time


def gather_window(src_layer: np.ndarray, src_time: np.ndarray, means: np.ndarray,
                  variances: np.ndarray, u: np.ndarray) -> UncertainInputSet:
    """Read regressor means/variances from latent arrays and the input sequence."""
    latent = src_layer != EXOGENOUS
    mu = np.zeros(src_layer.shape)
    var = np.zeros(src_layer.shape)
    mu[latent] = means[src_layer[latent], src_time[latent]]
    var[latent] = variances[src_layer[latent], src_time[latent]]
    exo = ~latent & (src_time >= 0)
    mu[exo] = u[src_time[exo]]
    return UncertainInputSet(means=mu, variances=var)


def training_times(config: ModelConfig, num_points: int) -> np.ndarray:
    if num_points <= config.lag:
        raise StructuralError(
            f"sequence of length {num_points} has no rows beyond the lag {config.lag}")
    return np.arange(config.lag, num_points)


def assemble_regressors(h: int, state: ModelState, u: np.ndarray) -> UncertainInputSet:
    """
    Uncertain regressor rows of layer h for every trainable time step.

    Args:
        h (int): Layer index, 1..H+1
        state (ModelState): Current parameters
        u (np.ndarray): Exogenous input sequence, length N

    Returns:
        UncertainInputSet: (N - L) x D_h means and variances
    """
    u = np.asarray(u, dtype=float)
    if u.shape[0] != state.num_points:
        raise StructuralError(f"u has length {u.shape[0]}, model has {state.num_points} points")
    times = training_times(state.config, state.num_points)
    src_layer, src_time = layer_sources(h, times, state.config)
    return gather_window(src_layer, src_time, state.variational.means,
                         state.variational.variances, u)


def default_ard(dim: int) -> np.ndarray:
    return np.full(dim, 1.0 / dim)


def init_model(config: ModelConfig, u: np.ndarray, y: np.ndarray, seed: int = Config.SEED,
               kernel_jitter: float = 0.0) -> ModelState:
    """
    Initial parameters for normalized training data.

    Latent means start at y, latent variances at Config.INIT_LATENT_VARIANCE,
    priors at the first L outputs with variance Config.INIT_PRIOR_VARIANCE.
    Inducing inputs are a seeded random subset of the initial regressor means.

    Args:
        config (ModelConfig): Model structure
        u (np.ndarray): Normalized input sequence
        y (np.ndarray): Normalized output sequence
        seed (int): Seed of the inducing-input selection and kernel perturbation
        kernel_jitter (float): Std of a log-space perturbation of the kernel
            hyperparameters, 0 keeps the defaults

    Returns:
        ModelState: Parameters satisfying every container invariant
    """
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.shape != y.shape:
        raise StructuralError(f"u and y differ in length ({u.shape[0]} vs {y.shape[0]})")
    N, H, L, M = y.shape[0], config.hidden_layers, config.lag, config.num_inducing
    training_times(config, N)
    rng = np.random.default_rng(seed)

    variational = VariationalState(
        means=np.tile(y, (H, 1)),
        variances=np.full((H, N), Config.INIT_LATENT_VARIANCE),
        prior_means=np.tile(y[:L], (H, 1)),
        prior_variances=np.full((H, L), Config.INIT_PRIOR_VARIANCE),
    )
    skeleton = ModelState(config=config, variational=variational, layers=())

    layers = []
    for h, dim in enumerate(config.layer_dims(), start=1):
        rows = assemble_regressors(h, skeleton, u).means
        pick = rng.choice(rows.shape[0], size=M, replace=M > rows.shape[0])
        Z = rows[pick].copy()
        if M > rows.shape[0]:
            Z += 1e-3 * rng.standard_normal(Z.shape)
        sf2, ard = Config.INIT_SIGNAL_VARIANCE, default_ard(dim)
        if kernel_jitter > 0:
            sf2 *= float(np.exp(kernel_jitter * rng.standard_normal()))
            ard = ard * np.exp(kernel_jitter * rng.standard_normal(dim))
        layers.append(LayerParams(kernel=KernelParams(sf2, ard),
                                  noise_variance=Config.INIT_NOISE_VARIANCE,
                                  inducing=InducingSet(Z)))
    return replace(skeleton, layers=tuple(layers))


def parameter_blocks(config: ModelConfig, num_points: int) -> Dict[str, np.ndarray]:
    """
    Indices of every named parameter block inside the packed vector.

    Layout: for h = 1..H the means (N), log variances (N), prior means (L)
    and log prior variances (L); then for h = 1..H+1 the log signal variance,
    log ARD weights (D_h), log noise variance and inducing inputs (M x D_h).
    """
    N, H, L, M = num_points, config.hidden_layers, config.lag, config.num_inducing
    blocks: Dict[str, List[np.ndarray]] = {k: [] for k in (
        "means", "variances", "prior_means", "prior_variances",
        "signal_variance", "ard_weights", "noise_variance", "inducing")}
    pos = 0

    def take(name, size):
        nonlocal pos
        blocks[name].append(np.arange(pos, pos + size))
        pos += size

    for _ in range(H):
        take("means", N)
        take("variances", N)
        take("prior_means", L)
        take("prior_variances", L)
    for dim in config.layer_dims():
        take("signal_variance", 1)
        take("ard_weights", dim)
        take("noise_variance", 1)
        take("inducing", M * dim)
    return {k: np.concatenate(v) if v else np.zeros(0, int) for k, v in blocks.items()}


def packed_length(config: ModelConfig, num_points: int) -> int:
    H, L, M = config.hidden_layers, config.lag, config.num_inducing
    return H * (2 * num_points + 2 * L) + sum(2 + d + M * d for d in config.layer_dims())


def pack(state: ModelState) -> np.ndarray:
    """Flatten a state; positive quantities are stored as logarithms."""
    v = state.variational
    parts = []
    for h in range(state.config.hidden_layers):
        parts += [v.means[h], np.log(v.variances[h]), v.prior_means[h], np.log(v.prior_variances[h])]
    for layer in state.layers:
        parts += [[np.log(layer.kernel.signal_variance)], np.log(layer.kernel.ard_weights),
                  [np.log(layer.noise_variance)], layer.inducing.pseudo_inputs.ravel()]
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def unpack(vector: np.ndarray, config: ModelConfig) -> ModelState:
    """
    Rebuild a state from a packed vector; the sequence length is inferred.

    Args:
        vector (np.ndarray): Packed parameters
        config (ModelConfig): Model structure

    Returns:
        ModelState: Unpacked parameters
    """
    vector = np.asarray(vector, dtype=float).ravel()
    H, L, M = config.hidden_layers, config.lag, config.num_inducing
    fixed = packed_length(config, 0)
    N, rest = divmod(vector.shape[0] - fixed, 2 * H)
    if rest != 0 or N <= L:
        raise StructuralError(
            f"packed vector of length {vector.shape[0]} does not match the model structure")
    pos = 0

    def take(size):
        nonlocal pos
        chunk = vector[pos:pos + size]
        pos += size
        return chunk

    means, variances, prior_means, prior_variances = [], [], [], []
    for _ in range(H):
        means.append(take(N))
        variances.append(np.exp(take(N)))
        prior_means.append(take(L))
        prior_variances.append(np.exp(take(L)))
    layers = []
    for dim in config.layer_dims():
        sf2 = float(np.exp(take(1)[0]))
        ard = np.exp(take(dim))
        noise = float(np.exp(take(1)[0]))
        Z = take(M * dim).reshape(M, dim).copy()
        layers.append(LayerParams(KernelParams(sf2, ard), noise, InducingSet(Z)))
    variational = VariationalState(np.array(means), np.array(variances),
                                   np.array(prior_means), np.array(prior_variances))
    return ModelState(config=config, variational=variational, layers=tuple(layers))


def save_model(path: str, state: ModelState, normalization: Dict[str, float],
               u: np.ndarray, y: np.ndarray, recognition: Optional[dict] = None) -> Path:
    """
    Write the versioned JSON model document.

    Args:
        path (str): Destination file
        state (ModelState): Trained parameters
        normalization (Dict[str, float]): Training-split statistics
        u (np.ndarray): Normalized training inputs
        y (np.ndarray): Normalized training outputs
        recognition (Optional[dict]): Serialized recognition networks

    Returns:
        Path: Written file
    """
    document = {
        "format_version": Config.MODEL_FORMAT_VERSION,
        "config": state.config.model_dump(mode="json"),
        "parameters": pack(state).tolist(),
        "normalization": normalization,
        "training_data": {"u": np.asarray(u).tolist(), "y": np.asarray(y).tolist()},
        "recognition": recognition,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document, indent=1), encoding="utf-8")
    logger.info("Saved model to %s", path)
    return path


def load_model(path: str) -> Tuple[ModelState, Dict[str, float], np.ndarray, np.ndarray, Optional[dict]]:
    """
    Read a document written by save_model.

    Returns:
        Tuple: state, normalization, training u, training y, recognition weights
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    document = json.loads(path.read_text(encoding="utf-8"))
    version = document.get("format_version")
    if version != Config.MODEL_FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    config = ModelConfig(**document["config"])
    state = unpack(np.array(document["parameters"]), config)
    data = document["training_data"]
    return (state, document["normalization"], np.array(data["u"]), np.array(data["y"]),
            document.get("recognition"))
