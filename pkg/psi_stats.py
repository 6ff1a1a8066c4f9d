"""
Kernel expectations under diagonal-Gaussian uncertain inputs.

For rows x_i ~ N(means_i, diag(variances_i)) and inducing inputs Z:

    psi0         = sum_i <k(x_i, x_i)>
    psi1[i, m]   = <k(x_i, z_m)>
    psi2[m, m']  = sum_i <k(x_i, z_m) k(x_i, z_m')>

Zero-variance columns behave as deterministic inputs. Gradients are returned
as vector-Jacobian products against upstream dL/dpsi terms; the expensive
psi2 terms are accumulated one input dimension at a time so memory stays at
N x M x M.
"""

from dataclasses import dataclass

import numpy as np

from kernel import KernelParams
from utils import StructuralError


@dataclass(frozen=True)
class UncertainInputSet:
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.atleast_2d(np.asarray(self.variances, dtype=float))
        if means.shape != variances.shape:
            raise StructuralError(
                f"means {means.shape} and variances {variances.shape} differ in shape")
        if np.any(variances < 0):
            raise StructuralError("input variances must be nonnegative")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def num_rows(self) -> int:
        return self.means.shape[0]

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class PsiStats:
    psi0: float
    psi1: np.ndarray
    psi2: np.ndarray
    psi2_rows: np.ndarray


@dataclass
class PsiGrads:
    means: np.ndarray
    variances: np.ndarray
    Z: np.ndarray
    signal_variance: float
    ard_weights: np.ndarray


def _check(q: UncertainInputSet, Z: np.ndarray, params: KernelParams) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if q.input_dim != params.input_dim or Z.shape[1] != params.input_dim:
        raise StructuralError(
            f"psi statistics got D={q.input_dim} inputs, Z with {Z.shape[1]} columns "
            f"and a kernel over {params.input_dim} dimensions")
    return Z


def _psi1(q: UncertainInputSet, Z: np.ndarray, params: KernelParams):
    w = params.ard_weights
    denom = 1.0 + w * q.variances                                  # N x D
    diff = q.means[:, None, :] - Z[None, :, :]                     # N x M x D
    log_psi1 = (-0.5 * np.sum(np.log(denom), axis=1)[:, None]
                - 0.5 * np.einsum("nmd,nd->nm", diff ** 2, w / denom))
    return params.signal_variance * np.exp(log_psi1), diff, denom


def _psi2_rows(q: UncertainInputSet, Z: np.ndarray, params: KernelParams) -> np.ndarray:
    """Per-row terms T[i, m, m'] whose sum over i is psi2."""
    w = params.ard_weights
    N, M = q.num_rows, Z.shape[0]
    log_t = np.full((N, M, M), 2.0 * np.log(params.signal_variance))
    for d in range(q.input_dim):
        denom2 = 1.0 + 2.0 * w[d] * q.variances[:, d]
        zd = Z[:, d][:, None] - Z[:, d][None, :]
        zbar = 0.5 * (Z[:, d][:, None] + Z[:, d][None, :])
        dbar = q.means[:, d][:, None, None] - zbar[None, :, :]
        log_t += (-0.5 * np.log(denom2)[:, None, None]
                  - 0.25 * w[d] * zd[None, :, :] ** 2
                  - w[d] * dbar ** 2 / denom2[:, None, None])
    return np.exp(log_t)


def compute_psi(q: UncertainInputSet, Z: np.ndarray, params: KernelParams) -> PsiStats:
    """
    Closed-form psi statistics of the exponentiated quadratic kernel.

    Args:
        q (UncertainInputSet): Gaussian inputs, one row per data point
        Z (np.ndarray): M x D inducing inputs
        params (KernelParams): Kernel hyperparameters

    Returns:
        PsiStats: psi0, psi1 (N x M), psi2 (M x M) and the per-row psi2 terms
    """
    Z = _check(q, Z, params)
    psi1, _, _ = _psi1(q, Z, params)
    rows = _psi2_rows(q, Z, params)
    psi2 = rows.sum(axis=0)
    psi2 = 0.5 * (psi2 + psi2.T)
    return PsiStats(psi0=q.num_rows * params.signal_variance, psi1=psi1, psi2=psi2,
                    psi2_rows=rows)


def psi_grads(q: UncertainInputSet, Z: np.ndarray, params: KernelParams,
              dL_dpsi0: float, dL_dpsi1: np.ndarray, dL_dpsi2: np.ndarray,
              stats: PsiStats = None) -> PsiGrads:
    """
    Chain upstream gradients through the psi statistics.

    Args:
        q (UncertainInputSet): Gaussian inputs
        Z (np.ndarray): M x D inducing inputs
        params (KernelParams): Kernel hyperparameters
        dL_dpsi0 (float): Upstream gradient of psi0
        dL_dpsi1 (np.ndarray): N x M upstream gradient of psi1
        dL_dpsi2 (np.ndarray): M x M upstream gradient of psi2
        stats (PsiStats): Precomputed statistics for the same inputs, optional

    Returns:
        PsiGrads: Gradients w.r.t. means, variances, Z, sf2 and ARD weights
    """
    Z = _check(q, Z, params)
    if stats is None:
        stats = compute_psi(q, Z, params)
    w = params.ard_weights
    sf2 = params.signal_variance
    N, D = q.means.shape

    d_means = np.zeros((N, D))
    d_vars = np.zeros((N, D))
    d_Z = np.zeros_like(Z)
    d_ard = np.zeros(D)

    # psi0 = N sf2
    d_sf2 = N * float(dL_dpsi0)

    # psi1
    psi1, diff, denom = _psi1(q, Z, params)
    G1 = np.asarray(dL_dpsi1, dtype=float) * psi1
    d_sf2 += float(np.sum(G1)) / sf2
    scaled = diff / denom[:, None, :]                              # diff / denom
    d_means -= np.einsum("nm,nmd->nd", G1, scaled) * w
    d_Z += np.einsum("nm,nmd->md", G1, scaled) * w
    d_vars += (-0.5 * w / denom * G1.sum(axis=1)[:, None]
               + 0.5 * w ** 2 * np.einsum("nm,nmd->nd", G1, scaled ** 2))
    d_ard += (-0.5 * np.sum(G1.sum(axis=1)[:, None] * q.variances / denom, axis=0)
              - 0.5 * np.einsum("nm,nmd->d", G1, scaled ** 2))

    # psi2
    G2 = np.asarray(dL_dpsi2, dtype=float)
    GT = G2[None, :, :] * stats.psi2_rows                         # N x M x M
    GTs = (G2 + G2.T)[None, :, :] * stats.psi2_rows
    d_sf2 += 2.0 * float(np.sum(GT)) / sf2
    gt_rows = GT.sum(axis=(1, 2))
    for d in range(D):
        denom2 = 1.0 + 2.0 * w[d] * q.variances[:, d]
        zd = Z[:, d][:, None] - Z[:, d][None, :]
        zbar = 0.5 * (Z[:, d][:, None] + Z[:, d][None, :])
        dbar = q.means[:, d][:, None, None] - zbar[None, :, :]
        r = dbar / denom2[:, None, None]                           # dbar / denom2
        d_means[:, d] += -2.0 * w[d] * np.einsum("nab,nab->n", GT, r)
        d_vars[:, d] += (-w[d] / denom2 * gt_rows
                         + 2.0 * w[d] ** 2 * np.einsum("nab,nab->n", GT, r ** 2))
        d_ard[d] += (-np.sum(gt_rows * q.variances[:, d] / denom2)
                     - 0.25 * np.einsum("nab,ab->", GT, zd ** 2)
                     - np.einsum("nab,nab->", GT, r ** 2))
        d_Z[:, d] += (-0.5 * w[d] * np.einsum("nab,ab->a", GTs, zd)
                      + w[d] * np.einsum("nab,nab->a", GTs, r))

    return PsiGrads(means=d_means, variances=d_vars, Z=d_Z, signal_variance=d_sf2,
                    ard_weights=d_ard)
