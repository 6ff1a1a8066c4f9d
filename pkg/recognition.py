"""
Sequential recognition model for the recurrent GP toolkit.

The latent means of hidden layer h are produced recurrently by a tanh
network g_h(x) = V tanh(W_k ... tanh(U x)) applied to the layer's own
regressor window of previously produced means, so the number of free
variational parameters no longer grows with the sequence length. Latent
variances stay free per point.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Tuple

import numpy as np

from config import Config, ModelConfig
from revarb_bound import lower_bound, state_grads, to_packed
from rgp_model import (EXOGENOUS, ModelState, VariationalState, init_model, layer_sources,
                       pack, packed_length, parameter_blocks, unpack)
from utils import StructuralError

logger = logging.getLogger(__name__)


@dataclass
class RecognitionNet:
    """tanh network with ``depth`` hidden layers and a scalar linear output."""

    input_map: np.ndarray
    hidden_maps: List[np.ndarray]
    output_map: np.ndarray

    def __post_init__(self):
        units = self.input_map.shape[0]
        for W in self.hidden_maps:
            if W.shape != (units, units):
                raise StructuralError(f"hidden map of shape {W.shape}, expected {(units, units)}")
        if self.output_map.shape != (units,):
            raise StructuralError(f"output map of shape {self.output_map.shape}, expected ({units},)")

    @property
    def input_dim(self) -> int:
        return self.input_map.shape[1]

    @classmethod
    def random(cls, input_dim: int, units: int, depth: int, rng: np.random.Generator,
               scale: float = Config.RECOGNITION_WEIGHT_SCALE) -> "RecognitionNet":
        return cls(input_map=scale * rng.standard_normal((units, input_dim)),
                   hidden_maps=[scale * rng.standard_normal((units, units)) for _ in range(depth - 1)],
                   output_map=scale * rng.standard_normal(units))

    @classmethod
    def zeros(cls, input_dim: int, units: int, depth: int) -> "RecognitionNet":
        return cls(np.zeros((units, input_dim)), [np.zeros((units, units)) for _ in range(depth - 1)],
                   np.zeros(units))

    def num_weights(self) -> int:
        return self.input_map.size + sum(W.size for W in self.hidden_maps) + self.output_map.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.input_map.ravel()] + [W.ravel() for W in self.hidden_maps]
                              + [self.output_map])

    def with_weights(self, vector: np.ndarray) -> "RecognitionNet":
        units, dim = self.input_map.shape
        pos = units * dim
        input_map = vector[:pos].reshape(units, dim)
        hidden = []
        for _ in self.hidden_maps:
            hidden.append(vector[pos:pos + units * units].reshape(units, units))
            pos += units * units
        return RecognitionNet(input_map, hidden, vector[pos:pos + units].copy())

    def forward(self, x: np.ndarray) -> Tuple[float, List[np.ndarray]]:
        """Output and the tanh activations of every hidden layer."""
        z = np.tanh(self.input_map @ x)
        activations = [z]
        for W in self.hidden_maps:
            z = np.tanh(W @ z)
            activations.append(z)
        return float(self.output_map @ z), activations

    def backward(self, x: np.ndarray, activations: List[np.ndarray], adjoint: float,
                 grad: "RecognitionNet") -> np.ndarray:
        """Accumulate weight gradients into ``grad`` and return d output / d x times adjoint."""
        grad.output_map += adjoint * activations[-1]
        dz = adjoint * self.output_map
        for k in range(len(self.hidden_maps), 0, -1):
            da = dz * (1.0 - activations[k] ** 2)
            grad.hidden_maps[k - 1] += np.outer(da, activations[k - 1])
            dz = self.hidden_maps[k - 1].T @ da
        da = dz * (1.0 - activations[0] ** 2)
        grad.input_map += np.outer(da, x)
        return self.input_map.T @ da

    def to_dict(self) -> dict:
        return {"input_map": self.input_map.tolist(),
                "hidden_maps": [W.tolist() for W in self.hidden_maps],
                "output_map": self.output_map.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RecognitionNet":
        return cls(np.array(data["input_map"], dtype=float),
                   [np.array(W, dtype=float) for W in data["hidden_maps"]],
                   np.array(data["output_map"], dtype=float))


def recognition_weight_count(config: ModelConfig) -> int:
    """Number of network weights; depends only on the structure, never on N."""
    units, depth = config.recognition_units, config.recognition_depth
    return sum(units * dim + (depth - 1) * units * units + units
               for dim in config.layer_dims()[:config.hidden_layers])


def free_mean_count(config: ModelConfig) -> int:
    """Leading latent means of each layer that stay free variational parameters."""
    return config.lag + (1 if config.recognition_window == "previous" else 0)


def _window_time(t: int, config: ModelConfig) -> int:
    return t - 1 if config.recognition_window == "previous" else t


def _window(h: int, s: int, means: np.ndarray, u: np.ndarray, config: ModelConfig):
    src_layer, src_time = layer_sources(h, np.array([s]), config)
    src_layer, src_time = src_layer[0], src_time[0]
    x = np.zeros(src_layer.shape[0])
    latent = src_layer != EXOGENOUS
    x[latent] = means[src_layer[latent], src_time[latent]]
    exo = ~latent & (src_time >= 0)
    x[exo] = u[src_time[exo]]
    return x, src_layer, src_time


def recognition_forward(nets: List[RecognitionNet], state: ModelState,
                        u: np.ndarray) -> np.ndarray:
    """
    Latent means generated sequentially by the recognition networks.

    Means before ``free_mean_count`` are read from ``state``; every later
    mean of layer h is g_h applied to the regressor window of layer h at
    t - 1 (``recognition_window="previous"``) or at t (``"current"``), built
    from the means produced so far.

    Args:
        nets (List[RecognitionNet]): One network per hidden layer
        state (ModelState): Supplies the free leading means
        u (np.ndarray): Normalized inputs

    Returns:
        np.ndarray: H x N latent means
    """
    config = state.config
    if len(nets) != config.hidden_layers:
        raise StructuralError(f"{len(nets)} recognition nets for {config.hidden_layers} hidden layers")
    dims = config.layer_dims()
    for h, net in enumerate(nets, start=1):
        if net.input_dim != dims[h - 1]:
            raise StructuralError(f"net of layer {h} takes {net.input_dim} inputs, window has {dims[h - 1]}")
    u = np.asarray(u, dtype=float).ravel()
    means, _ = _unroll(nets, state.variational.means, u, config)
    return means


def _unroll(nets, seed_means, u, config):
    means = np.array(seed_means, dtype=float, copy=True)
    start = free_mean_count(config)
    tape = []
    for t in range(start, means.shape[1]):
        for h in range(1, config.hidden_layers + 1):
            x, src_layer, src_time = _window(h, _window_time(t, config), means, u, config)
            out, activations = nets[h - 1].forward(x)
            means[h - 1, t] = out
            tape.append((t, h, x, activations, src_layer, src_time))
    return means, tape


def _backprop(nets, tape, adjoint_means):
    """Reverse sweep: weight gradients and the adjoints left on the free means."""
    adjoint = adjoint_means.copy()
    grads = [RecognitionNet.zeros(n.input_dim, n.input_map.shape[0], len(n.hidden_maps) + 1)
             for n in nets]
    for t, h, x, activations, src_layer, src_time in reversed(tape):
        a = adjoint[h - 1, t]
        adjoint[h - 1, t] = 0.0
        if a == 0.0:
            continue
        dx = nets[h - 1].backward(x, activations, a, grads[h - 1])
        latent = src_layer != EXOGENOUS
        np.add.at(adjoint, (src_layer[latent], src_time[latent]), dx[latent])
    return grads, adjoint


class RecognitionObjective:
    """
    REVARB bound over [network weights, remaining free parameters].

    The remaining parameters are the packed REVARB vector without the means
    that the networks produce.
    """

    name = "revarb+recognition"

    def __init__(self, config: ModelConfig, u: np.ndarray, y: np.ndarray):
        self.config = config
        self.u = np.asarray(u, dtype=float).ravel()
        self.y = np.asarray(y, dtype=float).ravel()
        N = self.y.shape[0]
        if N <= free_mean_count(config):
            raise StructuralError(f"sequence of length {N} leaves no means for the recognition model")
        self.blocks_full = parameter_blocks(config, N)
        covered = self.blocks_full["means"].reshape(config.hidden_layers, N)[:, free_mean_count(config):]
        keep = np.ones(packed_length(config, N), dtype=bool)
        keep[covered.ravel()] = False
        self.keep = np.flatnonzero(keep)
        self.num_packed = keep.shape[0]
        self.templates = [RecognitionNet.zeros(d, config.recognition_units, config.recognition_depth)
                          for d in config.layer_dims()[:config.hidden_layers]]
        self.num_weights = sum(net.num_weights() for net in self.templates)
        logger.debug("Recognition model: %d weights replace %d latent means",
                     self.num_weights, covered.size)

    def split(self, vector: np.ndarray) -> Tuple[List[RecognitionNet], np.ndarray]:
        nets, pos = [], 0
        for template in self.templates:
            size = template.num_weights()
            nets.append(template.with_weights(vector[pos:pos + size]))
            pos += size
        full = np.zeros(self.num_packed)
        full[self.keep] = vector[pos:]
        return nets, full

    def initial_vector(self, seed: int, kernel_jitter: float = 0.0) -> np.ndarray:
        rng = np.random.default_rng(seed + 1)
        nets = [RecognitionNet.random(t.input_dim, self.config.recognition_units,
                                      self.config.recognition_depth, rng) for t in self.templates]
        packed = pack(init_model(self.config, self.u, self.y, seed=seed, kernel_jitter=kernel_jitter))
        return np.concatenate([net.flatten() for net in nets] + [packed[self.keep]])

    def _state(self, vector):
        nets, full = self.split(vector)
        base = unpack(full, self.config)
        means, tape = _unroll(nets, base.variational.means, self.u, self.config)
        state = replace(base, variational=replace(base.variational, means=means))
        return nets, state, tape

    def to_state(self, vector: np.ndarray) -> ModelState:
        return self._state(vector)[1]

    def nets(self, vector: np.ndarray) -> List[RecognitionNet]:
        return self.split(vector)[0]

    def value_and_grad(self, vector: np.ndarray) -> Tuple[float, np.ndarray]:
        nets, state, tape = self._state(vector)
        breakdown, grads = state_grads(state, self.u, self.y)
        packed_grad = to_packed(grads, state)
        weight_grads, adjoint = _backprop(nets, tape, grads.means)
        packed_grad[self.blocks_full["means"]] = adjoint.ravel()
        return breakdown.total, np.concatenate([g.flatten() for g in weight_grads]
                                               + [packed_grad[self.keep]])

    def blocks(self) -> Dict[str, np.ndarray]:
        """Named index blocks of the objective vector."""
        position = np.full(self.num_packed, -1)
        position[self.keep] = np.arange(self.keep.shape[0]) + self.num_weights
        blocks = {"recognition_weights": np.arange(self.num_weights)}
        for name, idx in self.blocks_full.items():
            mapped = position[idx]
            blocks[name] = mapped[mapped >= 0]
        return blocks

    def frozen_in_warmup(self) -> np.ndarray:
        return self.blocks()["variances"]


def bound_with_recognition(nets: List[RecognitionNet], state: ModelState, u: np.ndarray,
                           y: np.ndarray) -> float:
    """
    REVARB bound at ``state`` with its latent means replaced by the networks' output.

    Args:
        nets (List[RecognitionNet]): One network per hidden layer
        state (ModelState): Supplies variances, priors, kernels, noise, inducing
            inputs and the free leading means
        u (np.ndarray): Normalized inputs
        y (np.ndarray): Normalized outputs

    Returns:
        float: Bound value
    """
    means = recognition_forward(nets, state, u)
    constrained = replace(state, variational=VariationalState(
        means=means, variances=state.variational.variances,
        prior_means=state.variational.prior_means,
        prior_variances=state.variational.prior_variances))
    return lower_bound(constrained, u, y).total


def nets_to_dict(nets: List[RecognitionNet], config: ModelConfig) -> dict:
    return {"window": config.recognition_window, "nets": [net.to_dict() for net in nets]}


def nets_from_dict(data: dict) -> List[RecognitionNet]:
    return [RecognitionNet.from_dict(d) for d in data["nets"]]
