"""
Trainer module for the recurrent GP toolkit.
Maximizes the REVARB bound (or any objective exposing the same interface)
with L-BFGS-B, a frozen-variance warm-up phase and seeded restarts, and
audits analytic gradients against central finite differences.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from config import ModelConfig, TrainOptions
from revarb_bound import lower_bound, value_and_grad
from rgp_model import ModelState, init_model, pack, parameter_blocks, unpack
from utils import RGPError, TrainingError

logger = logging.getLogger(__name__)

RESTART_KERNEL_JITTER = 0.3


@dataclass
class TrainTrace:
    """(evaluation index, bound, gradient norm) for every accepted iterate."""

    evaluations: List[int] = field(default_factory=list)
    bounds: List[float] = field(default_factory=list)
    grad_norms: List[float] = field(default_factory=list)

    def record(self, evaluation: int, bound: float, grad_norm: float):
        self.evaluations.append(int(evaluation))
        self.bounds.append(float(bound))
        self.grad_norms.append(float(grad_norm))

    def __len__(self) -> int:
        return len(self.bounds)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"evaluation": self.evaluations, "bound": self.bounds,
                             "grad_norm": self.grad_norms})

    def to_csv(self, path: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return path


class RevarbObjective:
    """The REVARB bound over the packed parameter vector of rgp_model."""

    name = "revarb"

    def __init__(self, config: ModelConfig, u: np.ndarray, y: np.ndarray):
        self.config = config
        self.u = np.asarray(u, dtype=float).ravel()
        self.y = np.asarray(y, dtype=float).ravel()

    def initial_vector(self, seed: int, kernel_jitter: float = 0.0) -> np.ndarray:
        return pack(init_model(self.config, self.u, self.y, seed=seed, kernel_jitter=kernel_jitter))

    def value_and_grad(self, vector: np.ndarray) -> Tuple[float, np.ndarray]:
        return value_and_grad(vector, self.config, self.u, self.y)

    def blocks(self) -> Dict[str, np.ndarray]:
        return parameter_blocks(self.config, self.y.shape[0])

    def frozen_in_warmup(self) -> np.ndarray:
        return self.blocks()["variances"]

    def to_state(self, vector: np.ndarray) -> ModelState:
        return unpack(vector, self.config)


@dataclass
class FitResult:
    vector: np.ndarray
    bound: float
    trace: TrainTrace
    restart: int
    grad_norm: float
    converged: bool
    evaluations: int
    seconds: float


class _Budget(Exception):
    """Raised inside the objective when the evaluation budget is spent."""


def maximize(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]], x0: np.ndarray,
             max_evals: int, tol: float, trace: TrainTrace, frozen: Optional[np.ndarray] = None,
             eval_offset: int = 0) -> Tuple[np.ndarray, float, float, int, str]:
    """
    Maximize fun with L-BFGS-B, holding the ``frozen`` coordinates fixed.

    Accepted iterates are appended to ``trace``. Numerical failures during a
    line search end the run at the last accepted iterate.

    Args:
        fun (Callable): Returns (value, gradient) at a full-length vector
        x0 (np.ndarray): Starting point
        max_evals (int): Budget of objective evaluations
        tol (float): Convergence threshold on the free-gradient norm
        trace (TrainTrace): Receives the accepted iterates
        frozen (Optional[np.ndarray]): Indices not optimized
        eval_offset (int): Evaluations already spent, for trace indices

    Returns:
        Tuple: best vector, its value, its free-gradient norm, evaluations used, status
    """
    x0 = np.asarray(x0, dtype=float).copy()
    free = np.ones(x0.shape[0], dtype=bool)
    if frozen is not None and len(frozen):
        free[np.asarray(frozen, dtype=int)] = False

    evals = 0
    cache: Dict[bytes, Tuple[float, np.ndarray]] = {}

    def full(z):
        x = x0.copy()
        x[free] = z
        return x

    def negative(z):
        nonlocal evals
        if evals >= max_evals:
            raise _Budget()
        evals += 1
        value, grad = fun(full(z))
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite objective or gradient")
        g = np.asarray(grad)[free]
        cache[z.tobytes()] = (value, g)
        if len(cache) > 64:
            cache.pop(next(iter(cache)))
        return -value, -g

    value0, g0 = negative(x0[free])
    best = (x0[free].copy(), -value0, float(np.linalg.norm(g0)))
    trace.record(eval_offset + evals, best[1], best[2])
    if best[2] < tol:
        return full(best[0]), best[1], best[2], evals, "converged"

    def callback(zk):
        nonlocal best
        key = zk.tobytes()
        if key in cache:
            value, g = cache[key]
        else:
            value, g = fun(full(zk))
            g = np.asarray(g)[free]
        best = (zk.copy(), float(value), float(np.linalg.norm(g)))
        trace.record(eval_offset + evals, best[1], best[2])
        if best[2] < tol:
            raise StopIteration

    status = "budget"
    try:
        result = minimize(negative, x0[free], jac=True, method="L-BFGS-B", callback=callback,
                          options={"maxfun": max_evals, "maxiter": max_evals, "gtol": 0.0,
                                   "ftol": 1e-15, "maxcor": 20})
        status = "converged" if best[2] < tol else str(result.message)
    except StopIteration:
        status = "converged"
    except _Budget:
        status = "budget"
    except (RGPError, FloatingPointError, np.linalg.LinAlgError) as exc:
        status = f"numerical failure: {exc}"
        logger.warning("Optimization stopped at the last accepted iterate: %s", exc)
    return full(best[0]), best[1], best[2], evals, status


def fit_objective(objective, opts: TrainOptions) -> FitResult:
    """
    Run every restart of an objective and keep the one with the highest bound.

    Args:
        objective: Object with initial_vector, value_and_grad and frozen_in_warmup
        opts (TrainOptions): Budget, tolerance, restarts and seed

    Returns:
        FitResult: Best restart
    """
    results: List[FitResult] = []
    diagnostics = []
    for restart in range(opts.restarts):
        start = time.perf_counter()
        seed = opts.seed + 1000 * restart
        jitter = 0.0 if restart == 0 else RESTART_KERNEL_JITTER
        logger.info("Restart %d/%d of %s (seed %d)", restart + 1, opts.restarts,
                    objective.name, seed)
        try:
            x = objective.initial_vector(seed, kernel_jitter=jitter)
            trace = TrainTrace()
            used = 0
            warmup = opts.warmup_evals()
            if warmup > 0:
                x, _, _, used, status = maximize(objective.value_and_grad, x, warmup,
                                                 opts.convergence_tol, trace,
                                                 frozen=objective.frozen_in_warmup())
                logger.info("Warm-up phase ended after %d evaluations (%s)", used, status)
            remaining = max(opts.max_evals - used, 1)
            x, bound, grad_norm, spent, status = maximize(
                objective.value_and_grad, x, remaining, opts.convergence_tol, trace,
                eval_offset=used)
            used += spent
        except (RGPError, FloatingPointError, np.linalg.LinAlgError) as exc:
            logger.warning("Restart %d failed: %s", restart + 1, exc)
            diagnostics.append({"restart": restart, "seed": seed, "error": str(exc)})
            continue
        converged = grad_norm < opts.convergence_tol
        logger.info("Restart %d finished: bound %.6f, |grad| %.3e, %d evaluations (%s)",
                    restart + 1, bound, grad_norm, used, status)
        results.append(FitResult(vector=x, bound=bound, trace=trace, restart=restart,
                                 grad_norm=grad_norm, converged=converged, evaluations=used,
                                 seconds=time.perf_counter() - start))
    if not results:
        raise TrainingError(f"all {opts.restarts} restarts failed", diagnostics=diagnostics)
    return max(results, key=lambda r: r.bound)


@dataclass
class TrainedModel:
    state: ModelState
    trace: TrainTrace
    bound: float
    recognition: Optional[dict] = None


def make_objective(config: ModelConfig, u: np.ndarray, y: np.ndarray):
    if config.recognition:
        from recognition import RecognitionObjective
        return RecognitionObjective(config, u, y)
    return RevarbObjective(config, u, y)


def train_model(config: ModelConfig, u: np.ndarray, y: np.ndarray,
                opts: TrainOptions) -> TrainedModel:
    """Fit and keep the serialized recognition networks when the model has them."""
    objective = make_objective(config, u, y)
    result = fit_objective(objective, opts)
    recognition = None
    if config.recognition:
        from recognition import nets_to_dict
        recognition = nets_to_dict(objective.nets(result.vector), config)
    return TrainedModel(state=objective.to_state(result.vector), trace=result.trace,
                        bound=result.bound, recognition=recognition)


def fit(config: ModelConfig, u: np.ndarray, y: np.ndarray,
        opts: TrainOptions) -> Tuple[ModelState, TrainTrace]:
    """
    Train a recurrent GP on normalized data.

    With ``config.recognition`` the latent means are produced by the
    sequential recognition networks.

    Args:
        config (ModelConfig): Model structure
        u (np.ndarray): Normalized inputs
        y (np.ndarray): Normalized outputs
        opts (TrainOptions): Optimizer options

    Returns:
        Tuple[ModelState, TrainTrace]: Best state and its trace
    """
    trained = train_model(config, u, y, opts)
    return trained.state, trained.trace


def finite_difference_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray,
                               step: float = 1e-5, indices: Optional[np.ndarray] = None) -> np.ndarray:
    """Central differences of a scalar function, optionally on a subset of coordinates."""
    x = np.asarray(x, dtype=float)
    indices = np.arange(x.shape[0]) if indices is None else np.asarray(indices, dtype=int)
    grad = np.zeros(x.shape[0])
    for k in indices:
        e = np.zeros_like(x)
        e[k] = step
        grad[k] = (fun(x + e) - fun(x - e)) / (2.0 * step)
    return grad


@dataclass
class GradCheckReport:
    worst: Dict[str, float]
    flagged: List[str]
    tolerance: float
    step: float

    @property
    def passed(self) -> bool:
        return not self.flagged


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_objective_gradient(fun: Callable[[np.ndarray], Tuple[float, np.ndarray]],
                             x: np.ndarray, blocks: Dict[str, np.ndarray], step: float = 1e-5,
                             tolerance: float = 1e-4, floor: float = 1e-2) -> GradCheckReport:
    """
    Compare an analytic gradient with central differences block by block.

    Components smaller than ``floor`` in magnitude are judged on absolute error.
    """
    _, analytic = fun(x)
    numeric = finite_difference_gradient(lambda z: fun(z)[0], x, step)
    errors = relative_errors(analytic, numeric, floor)
    worst = {name: float(errors[idx].max()) if len(idx) else 0.0 for name, idx in blocks.items()}
    flagged = sorted(name for name, err in worst.items() if err > tolerance)
    for name in flagged:
        logger.warning("Gradient block %s exceeds tolerance: %.3e", name, worst[name])
    return GradCheckReport(worst=worst, flagged=flagged, tolerance=tolerance, step=step)


def grad_check(state: ModelState, u: np.ndarray, y: np.ndarray, step: float = 1e-5,
               tolerance: float = 1e-4) -> GradCheckReport:
    """
    Audit bound_grads against central differences of lower_bound.

    Steps are taken in the packed (log) coordinates.

    Args:
        state (ModelState): Parameters to check at
        u (np.ndarray): Normalized inputs
        y (np.ndarray): Normalized outputs
        step (float): Finite-difference step
        tolerance (float): Largest acceptable relative error per block

    Returns:
        GradCheckReport: Worst relative error per block and the flagged blocks
    """
    config = state.config

    def fun(vector):
        return value_and_grad(vector, config, u, y)

    report = check_objective_gradient(fun, pack(state), parameter_blocks(config, state.num_points),
                                      step, tolerance)
    logger.info("Gradient check at bound %.6f: %s", lower_bound(state, u, y).total,
                "passed" if report.passed else f"flagged {report.flagged}")
    return report
