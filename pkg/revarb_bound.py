"""
REVARB lower bound module.
Evaluates the collapsed variational bound of a recurrent GP after optimal
elimination of the inducing outputs, its analytic gradients, and the
optimal q(z) statistics used for prediction.

Per layer with targets t (latent means, or y at the output layer), noise
precision b = 1/sigma^2 and A = K_z + b Psi2:

    -n/2 log(2 pi sigma^2) - b/2 (t't [+ sum lambda] + Psi0) + b/2 Tr(K_z^-1 Psi2)
    + 1/2 log|K_z| - 1/2 log|A| + b^2/2 t' Psi1 A^-1 Psi1' t

plus, for hidden layers, the entropy of every q(x_t) and the
cross-entropy against the initial priors for t < L.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
from scipy import linalg

from config import ModelConfig
from kernel import KernelParams, cross_gram, gram_grads
from psi_stats import compute_psi, psi_grads
from rgp_model import (EXOGENOUS, ModelState, layer_sources, gather_window, pack,
                       training_times, unpack)
from utils import LOG_2PI, StructuralError, chol_logdet, cholesky, jitter_cholesky

logger = logging.getLogger(__name__)


@dataclass
class LayerTerms:
    constant: float = 0.0
    fit: float = 0.0
    trace: float = 0.0
    log_det: float = 0.0
    quadratic: float = 0.0
    entropy: float = 0.0
    cross_entropy: float = 0.0

    def total(self) -> float:
        return (self.constant + self.fit + self.trace + self.log_det + self.quadratic
                + self.entropy + self.cross_entropy)


@dataclass
class BoundBreakdown:
    """Bound value with every component, one LayerTerms per layer 1..H+1."""

    total: float
    layers: List[LayerTerms]

    def component(self, name: str) -> float:
        return float(sum(getattr(t, name) for t in self.layers))


@dataclass
class LayerQz:
    """Optimal q(z) of one layer plus the factors prediction needs."""

    B: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    kernel: KernelParams
    Z: np.ndarray
    noise_variance: float
    chol_Kz: np.ndarray
    chol_A: np.ndarray
    Kinv_minus_Ainv: np.ndarray


@dataclass
class OptimalQz:
    layers: List[LayerQz]


@dataclass
class StateGrads:
    """Gradients of the bound in natural (untransformed) coordinates."""

    means: np.ndarray
    variances: np.ndarray
    prior_means: np.ndarray
    prior_variances: np.ndarray
    signal_variance: List[float] = field(default_factory=list)
    ard_weights: List[np.ndarray] = field(default_factory=list)
    noise_variance: List[float] = field(default_factory=list)
    inducing: List[np.ndarray] = field(default_factory=list)


def _check_data(state: ModelState, u: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    u = np.asarray(u, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if u.shape[0] != state.num_points or y.shape[0] != state.num_points:
        raise StructuralError(
            f"data of length {u.shape[0]}/{y.shape[0]} for a model of {state.num_points} points")
    training_times(state.config, state.num_points)
    return u, y


def _factorize(state: ModelState, h: int, psi2: np.ndarray):
    """
    Whitened factors of layer h.

    With K_z = L_k L_k' and C = L_k^-1 Psi2 L_k^-T, A = L_k (I + b C) L_k' and
    L_b is the lower factor of I + b C, so L_k L_b is the lower factor of A.
    """
    layer = state.layers[h - 1]
    kp, Z = layer.kernel, layer.inducing.pseudo_inputs
    beta = 1.0 / layer.noise_variance
    Kz = cross_gram(Z, Z, kp)
    Kz = 0.5 * (Kz + Kz.T)
    L_k, rel = jitter_cholesky(Kz, kp.signal_variance, start=state.config.jitter,
                               context=f"K_z of layer {h}")
    Kz = Kz + rel * kp.signal_variance * np.eye(Kz.shape[0])
    half = linalg.solve_triangular(L_k, psi2, lower=True)
    C = linalg.solve_triangular(L_k, half.T, lower=True)
    C = 0.5 * (C + C.T)
    L_b = cholesky(np.eye(C.shape[0]) + beta * C, context=f"I + C/sigma^2 of layer {h}")
    return Kz, rel, L_k, L_b, C, beta


def _solve_a(L_k: np.ndarray, L_b: np.ndarray, vec: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Return (r, A^-1 vec) with r = L_b^-1 L_k^-1 vec, so vec' A^-1 vec = r'r."""
    r = linalg.solve_triangular(L_b, linalg.solve_triangular(L_k, vec, lower=True), lower=True)
    c = linalg.solve_triangular(L_k, linalg.solve_triangular(L_b, r, lower=True, trans="T"),
                                lower=True, trans="T")
    return r, c


def _evaluate(state: ModelState, u: np.ndarray, y: np.ndarray, need_grads: bool):
    u, y = _check_data(state, u, y)
    cfg = state.config
    H, L = cfg.hidden_layers, cfg.lag
    v = state.variational
    times = training_times(cfg, state.num_points)
    n = times.shape[0]

    terms: List[LayerTerms] = []
    grads = StateGrads(means=np.zeros_like(v.means), variances=np.zeros_like(v.variances),
                       prior_means=np.zeros_like(v.prior_means),
                       prior_variances=np.zeros_like(v.prior_variances))

    for h in range(1, H + 2):
        layer = state.layers[h - 1]
        kp, Z = layer.kernel, layer.inducing.pseudo_inputs
        src_layer, src_time = layer_sources(h, times, cfg)
        q = gather_window(src_layer, src_time, v.means, v.variances, u)
        stats = compute_psi(q, Z, kp)
        Kz, rel, L_k, L_b, C, beta = _factorize(state, h, stats.psi2)

        if h <= H:
            t = v.means[h - 1, L:]
            lam_sum = float(np.sum(v.variances[h - 1, L:]))
        else:
            t = y[L:]
            lam_sum = 0.0

        vec = stats.psi1.T @ t
        r, c = _solve_a(L_k, L_b, vec)
        tr_c = float(np.trace(C))

        lt = LayerTerms()
        lt.constant = -0.5 * n * (LOG_2PI + np.log(layer.noise_variance))
        lt.fit = -0.5 * beta * (float(t @ t) + lam_sum + stats.psi0)
        lt.trace = 0.5 * beta * tr_c
        lt.log_det = -0.5 * chol_logdet(L_b)
        lt.quadratic = 0.5 * beta ** 2 * float(r @ r)

        if h <= H:
            lt.entropy = float(np.sum(0.5 * (LOG_2PI + 1.0 + np.log(v.variances[h - 1]))))
            mu_i, lam_i = v.means[h - 1, :L], v.variances[h - 1, :L]
            mu0, lam0 = v.prior_means[h - 1], v.prior_variances[h - 1]
            lt.cross_entropy = float(np.sum(
                -0.5 * (LOG_2PI + np.log(lam0)) - (lam_i + (mu_i - mu0) ** 2) / (2.0 * lam0)))
        terms.append(lt)

        if not need_grads:
            continue

        Li = linalg.solve_triangular(L_k, np.eye(L_k.shape[0]), lower=True)
        Bi = linalg.solve_triangular(L_b, Li, lower=True)
        Kinv = Li.T @ Li
        Ainv = Bi.T @ Bi
        tr_ainv_psi2 = float(np.trace(linalg.cho_solve((L_b, True), C)))

        dF_dt = -beta * t + beta ** 2 * (stats.psi1 @ c)
        dF_dpsi0 = -0.5 * beta
        dF_dpsi1 = beta ** 2 * np.outer(t, c)
        dF_dpsi2 = 0.5 * beta * Kinv - 0.5 * beta * Ainv - 0.5 * beta ** 3 * np.outer(c, c)
        dF_dKz = (-0.5 * beta * Li.T @ C @ Li + 0.5 * Kinv - 0.5 * Ainv
                  - 0.5 * beta ** 2 * np.outer(c, c))
        dF_dbeta = (0.5 * n / beta - 0.5 * (float(t @ t) + lam_sum + stats.psi0)
                    + 0.5 * tr_c - 0.5 * tr_ainv_psi2
                    + beta * float(r @ r) - 0.5 * beta ** 2 * float(c @ stats.psi2 @ c))

        pg = psi_grads(q, Z, kp, dF_dpsi0, dF_dpsi1, dF_dpsi2, stats=stats)
        kg = gram_grads(Z, kp, dF_dKz, relative_jitter=rel)

        latent = src_layer != EXOGENOUS
        np.add.at(grads.means, (src_layer[latent], src_time[latent]), pg.means[latent])
        np.add.at(grads.variances, (src_layer[latent], src_time[latent]), pg.variances[latent])

        if h <= H:
            grads.means[h - 1, L:] += dF_dt
            grads.variances[h - 1, L:] += -0.5 * beta + 0.5 / v.variances[h - 1, L:]
            mu_i, lam_i = v.means[h - 1, :L], v.variances[h - 1, :L]
            mu0, lam0 = v.prior_means[h - 1], v.prior_variances[h - 1]
            grads.means[h - 1, :L] += -(mu_i - mu0) / lam0
            grads.variances[h - 1, :L] += 0.5 / lam_i - 0.5 / lam0
            grads.prior_means[h - 1] += (mu_i - mu0) / lam0
            grads.prior_variances[h - 1] += (-0.5 / lam0
                                             + (lam_i + (mu_i - mu0) ** 2) / (2.0 * lam0 ** 2))

        grads.signal_variance.append(pg.signal_variance + kg.signal_variance)
        grads.ard_weights.append(pg.ard_weights + kg.ard_weights)
        grads.noise_variance.append(-beta ** 2 * dF_dbeta)
        grads.inducing.append(pg.Z + kg.Z)

    total = float(sum(t.total() for t in terms))
    return BoundBreakdown(total=total, layers=terms), (grads if need_grads else None)


def lower_bound(state: ModelState, u: np.ndarray, y: np.ndarray) -> BoundBreakdown:
    """
    Evaluate the REVARB bound with its per-layer components.

    Args:
        state (ModelState): Parameters
        u (np.ndarray): Normalized input sequence
        y (np.ndarray): Normalized output sequence

    Returns:
        BoundBreakdown: Total and components
    """
    breakdown, _ = _evaluate(state, u, y, need_grads=False)
    return breakdown


def state_grads(state: ModelState, u: np.ndarray, y: np.ndarray) -> Tuple[BoundBreakdown, StateGrads]:
    """Bound and its gradient in natural coordinates."""
    return _evaluate(state, u, y, need_grads=True)


def to_packed(grads: StateGrads, state: ModelState) -> np.ndarray:
    """Map natural-coordinate gradients to the log-transformed packed layout."""
    v = state.variational
    parts = []
    for h in range(state.config.hidden_layers):
        parts += [grads.means[h], grads.variances[h] * v.variances[h],
                  grads.prior_means[h], grads.prior_variances[h] * v.prior_variances[h]]
    for j, layer in enumerate(state.layers):
        parts += [[grads.signal_variance[j] * layer.kernel.signal_variance],
                  grads.ard_weights[j] * layer.kernel.ard_weights,
                  [grads.noise_variance[j] * layer.noise_variance],
                  grads.inducing[j].ravel()]
    return np.concatenate([np.asarray(p, dtype=float).ravel() for p in parts])


def bound_grads(state: ModelState, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """
    Gradient of the bound w.r.t. every free parameter, in packed (log) coordinates.

    Args:
        state (ModelState): Parameters
        u (np.ndarray): Normalized input sequence
        y (np.ndarray): Normalized output sequence

    Returns:
        np.ndarray: Gradient aligned with rgp_model.pack(state)
    """
    _, grads = _evaluate(state, u, y, need_grads=True)
    return to_packed(grads, state)


def value_and_grad(vector: np.ndarray, config: ModelConfig, u: np.ndarray,
                   y: np.ndarray) -> Tuple[float, np.ndarray]:
    """Bound and packed gradient at a packed parameter vector."""
    state = unpack(vector, config)
    breakdown, grads = _evaluate(state, u, y, need_grads=True)
    return breakdown.total, to_packed(grads, state)


def recover_qz(state: ModelState, u: np.ndarray, y: np.ndarray) -> OptimalQz:
    """
    Optimal inducing-output posteriors implied by the collapsed bound.

    B = b A^-1 Psi1' t, mean = K_z B, covariance = K_z A^-1 K_z, with the
    latent means as targets for hidden layers and y for the output layer.

    Args:
        state (ModelState): Trained parameters
        u (np.ndarray): Normalized training inputs
        y (np.ndarray): Normalized training outputs

    Returns:
        OptimalQz: Per-layer statistics and cached factors
    """
    u, y = _check_data(state, u, y)
    cfg = state.config
    H, L = cfg.hidden_layers, cfg.lag
    v = state.variational
    times = training_times(cfg, state.num_points)
    layers = []
    for h in range(1, H + 2):
        layer = state.layers[h - 1]
        src_layer, src_time = layer_sources(h, times, cfg)
        q = gather_window(src_layer, src_time, v.means, v.variances, u)
        stats = compute_psi(q, layer.inducing.pseudo_inputs, layer.kernel)
        Kz, _, L_k, L_b, _, beta = _factorize(state, h, stats.psi2)
        L_a = L_k @ L_b
        Li = linalg.solve_triangular(L_k, np.eye(L_k.shape[0]), lower=True)
        inner = np.eye(L_b.shape[0]) - linalg.cho_solve((L_b, True), np.eye(L_b.shape[0]))
        t = v.means[h - 1, L:] if h <= H else y[L:]
        B = beta * linalg.cho_solve((L_a, True), stats.psi1.T @ t)
        cov = Kz @ linalg.cho_solve((L_a, True), Kz)
        cov = 0.5 * (cov + cov.T)
        layers.append(LayerQz(B=B, mean=Kz @ B, covariance=cov, kernel=layer.kernel,
                              Z=layer.inducing.pseudo_inputs, noise_variance=layer.noise_variance,
                              chol_Kz=L_k, chol_A=L_a,
                              Kinv_minus_Ainv=Li.T @ inner @ Li))
        logger.debug("Layer %d: |B| = %.3g, mean output variance %.3g", h, np.linalg.norm(B),
                     float(np.mean(np.diag(cov))))
    return OptimalQz(layers=layers)


def block_summary(breakdown: BoundBreakdown) -> Dict[str, float]:
    """Bound components summed over layers, for logging and reports."""
    names = ("constant", "fit", "trace", "log_det", "quadratic", "entropy", "cross_entropy")
    summary = {name: breakdown.component(name) for name in names}
    summary["total"] = breakdown.total
    return summary
