"""
Kernel module for the recurrent GP toolkit.
ARD exponentiated quadratic covariance, Gram and cross-covariance matrices
and their parameter gradients.
"""

from dataclasses import dataclass

import numpy as np

from config import Config
from utils import StructuralError, jitter_cholesky


@dataclass(frozen=True)
class KernelParams:
    """
    Hyperparameters of k(x, x') = sf2 * exp(-0.5 * sum_d w_d (x_d - x'_d)^2).

    ``ard_weights`` holds the squared weights w_d^2 directly.
    """

    signal_variance: float
    ard_weights: np.ndarray

    def __post_init__(self):
        ard = np.atleast_1d(np.asarray(self.ard_weights, dtype=float))
        object.__setattr__(self, "ard_weights", ard)
        if not self.signal_variance > 0:
            raise StructuralError("signal_variance must be positive")
        if ard.ndim != 1 or np.any(ard <= 0):
            raise StructuralError("ard_weights must be a vector of positive reals")

    @property
    def input_dim(self) -> int:
        return self.ard_weights.shape[0]


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    jitter_applied: float
    chol: np.ndarray


@dataclass
class KernelGrads:
    """Vector-Jacobian products of a kernel matrix with an upstream gradient."""

    signal_variance: float
    ard_weights: np.ndarray
    X: np.ndarray
    Z: np.ndarray


def _as_matrix(X: np.ndarray, params: KernelParams, name: str) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise StructuralError(
            f"{name} has {X.shape[-1]} columns, kernel expects {params.input_dim}")
    return X


def kern(x: np.ndarray, x2: np.ndarray, params: KernelParams) -> float:
    """
    Evaluate the kernel at a single pair of points.

    Args:
        x (np.ndarray): First point, length D
        x2 (np.ndarray): Second point, length D
        params (KernelParams): Kernel hyperparameters

    Returns:
        float: Covariance, in (0, sf2]
    """
    x = np.asarray(x, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    if x.shape != x2.shape or x.shape[0] != params.input_dim:
        raise StructuralError(
            f"kern got points of length {x.shape[0]} and {x2.shape[0]}, "
            f"kernel expects {params.input_dim}")
    r2 = np.sum(params.ard_weights * (x - x2) ** 2)
    return float(params.signal_variance * np.exp(-0.5 * r2))


def cross_gram(X: np.ndarray, Z: np.ndarray, params: KernelParams) -> np.ndarray:
    """
    Cross-covariance matrix between the rows of X and the rows of Z.

    Args:
        X (np.ndarray): N x D inputs
        Z (np.ndarray): M x D inputs
        params (KernelParams): Kernel hyperparameters

    Returns:
        np.ndarray: N x M matrix
    """
    X = _as_matrix(X, params, "X")
    Z = _as_matrix(Z, params, "Z")
    diff = X[:, None, :] - Z[None, :, :]
    r2 = np.einsum("nmd,d->nm", diff ** 2, params.ard_weights)
    return params.signal_variance * np.exp(-0.5 * r2)


def gram(X: np.ndarray, params: KernelParams, jitter: float = Config.JITTER_START,
         context: str = "K") -> GramMatrix:
    """
    Gram matrix of X with a jittered diagonal and its Cholesky factor.

    ``jitter`` is relative to the signal variance: the diagonal holds
    sf2 * (1 + jitter), not sf2 + jitter, so the jitter scales with the
    kernel. It escalates by Config.JITTER_GROWTH while the factorization fails.

    Args:
        X (np.ndarray): N x D inputs
        params (KernelParams): Kernel hyperparameters
        jitter (float): Starting relative jitter
        context (str): Name used in numerical error messages

    Returns:
        GramMatrix: Jittered matrix, absolute jitter and lower factor
    """
    X = _as_matrix(X, params, "X")
    if X.shape[0] < 1:
        raise StructuralError("gram needs at least one row")
    K = cross_gram(X, X, params)
    K = 0.5 * (K + K.T)
    L, rel = jitter_cholesky(K, params.signal_variance, start=jitter, context=context)
    absolute = rel * params.signal_variance
    return GramMatrix(values=K + absolute * np.eye(K.shape[0]), jitter_applied=absolute, chol=L)


def kernel_grads(X: np.ndarray, Z: np.ndarray, params: KernelParams,
                 dL_dK: np.ndarray) -> KernelGrads:
    """
    Chain an upstream gradient dL/dK through K = cross_gram(X, Z).

    Args:
        X (np.ndarray): N x D inputs
        Z (np.ndarray): M x D inputs
        params (KernelParams): Kernel hyperparameters
        dL_dK (np.ndarray): N x M upstream gradient

    Returns:
        KernelGrads: Gradients w.r.t. sf2, each w_d^2, X and Z
    """
    X = _as_matrix(X, params, "X")
    Z = _as_matrix(Z, params, "Z")
    dL_dK = np.asarray(dL_dK, dtype=float).reshape(X.shape[0], Z.shape[0])
    K = cross_gram(X, Z, params)
    G = dL_dK * K
    diff = X[:, None, :] - Z[None, :, :]
    w = params.ard_weights
    d_sf2 = float(np.sum(G)) / params.signal_variance
    d_ard = -0.5 * np.einsum("nm,nmd->d", G, diff ** 2)
    d_X = -np.einsum("nm,nmd->nd", G, diff) * w
    d_Z = np.einsum("nm,nmd->md", G, diff) * w
    return KernelGrads(signal_variance=d_sf2, ard_weights=d_ard, X=d_X, Z=d_Z)


def gram_grads(Z: np.ndarray, params: KernelParams, dL_dK: np.ndarray,
               relative_jitter: float = 0.0) -> KernelGrads:
    """
    Chain dL/dK through K = cross_gram(Z, Z) + relative_jitter * sf2 * I.

    Both argument slots depend on Z, so their contributions are summed into
    ``Z``; ``X`` mirrors it.
    """
    g = kernel_grads(Z, Z, params, dL_dK)
    d_Z = g.X + g.Z
    d_sf2 = g.signal_variance + relative_jitter * float(np.trace(dL_dK))
    return KernelGrads(signal_variance=d_sf2, ard_weights=g.ard_weights, X=d_Z, Z=d_Z)
