"""
RGP-SYSID - Recurrent Gaussian Process System Identification
Command-line entry point: synthetic data generation, training, free
simulation, benchmark grids and gradient audits.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from bench import run_experiment
from config import Config, DatasetSource, ExperimentConfig, ModelConfig, SyntheticSpec, TrainOptions
from datasets import (NormalizationStats, denormalize, denormalize_variance, generate_synthetic,
                      load_csv, normalize, write_csv)
from predictor import free_simulate, rmse, write_layer_trajectories, write_predictions
from recognition import nets_from_dict, recognition_forward
from revarb_bound import recover_qz
from rgp_model import init_model, load_model, save_model
from trainer import check_objective_gradient, grad_check, make_objective, train_model
from utils import PerformanceMonitor, RGPError, create_error_report

logger = logging.getLogger("rgp")


def model_config_from_args(args) -> ModelConfig:
    recognition = args.recognition or getattr(args, "model", None) == "revarb+recognition"
    return ModelConfig(hidden_layers=args.layers, lag=args.lag, input_lag=args.input_lag,
                       num_inducing=args.inducing, recognition=recognition,
                       recognition_depth=args.recognition_depth)


def train_options_from_args(args) -> TrainOptions:
    return TrainOptions(max_evals=args.max_evals, restarts=args.restarts, seed=args.seed)


def cmd_generate(args) -> int:
    """Write the synthetic benchmark's train and test splits as CSV."""
    spec = SyntheticSpec(noise_std=args.noise_std)
    train, test = generate_synthetic(spec, args.seed, args.n_train, args.n_test)
    out = Path(args.out_dir)
    write_csv(out / "train.csv", train)
    write_csv(out / "test.csv", test)
    print(f"Wrote {len(train)} training and {len(test)} test samples to {out}")
    return 0


def cmd_train(args) -> int:
    """Fit a recurrent GP on a CSV and save the model document."""
    monitor = PerformanceMonitor()
    data = load_csv(args.data)
    train, _, stats = normalize(data, data)
    config = model_config_from_args(args)
    monitor.start_timing("train")
    trained = train_model(config, train.u, train.y, train_options_from_args(args))
    monitor.end_timing("train")
    out = Path(args.out_dir)
    save_model(out / "model.json", trained.state, stats.to_dict(), train.u, train.y, trained.recognition)
    trained.trace.to_csv(out / "trace.csv")
    print(f"Final bound {trained.bound:.6f} after {monitor.get_timing('train'):.1f} s; "
          f"model written to {out / 'model.json'}")
    return 0


def cmd_simulate(args) -> int:
    """Free-simulate a saved model on a CSV and write its predictions."""
    state, normalization, u_train, y_train, recognition = load_model(args.model_file)
    if recognition is not None:
        # covered latent means are a function of the networks
        means = recognition_forward(nets_from_dict(recognition), state, u_train)
        state = replace(state, variational=replace(state.variational, means=means))
        logger.info("Regenerated latent means from %d recognition networks", state.config.hidden_layers)
    stats = NormalizationStats.from_dict(normalization)
    data = load_csv(args.data)
    u = (data.u - stats.u_mean) / stats.u_std
    y = (data.y - stats.y_mean) / stats.y_std
    qz = recover_qz(state, u_train, y_train)
    cfg = state.config
    init = np.tile(y[:cfg.lag], (cfg.hidden_layers, 1))
    moments = free_simulate(state, qz, u, init=init)
    common = moments.steps >= max(cfg.lag, cfg.input_lag)
    steps = moments.steps[common]
    mean = denormalize(moments.output_mean[common], stats)
    variance = denormalize_variance(moments.output_variance[common], stats)
    out = Path(args.out_dir)
    write_predictions(out / "predictions.csv", steps, mean, variance, data.y[steps])
    write_layer_trajectories(out / "layers.csv", moments)
    print(f"Free-simulation RMSE {rmse(mean, data.y[steps]):.4f}; predictions in {out}")
    return 0


def experiment_from_args(args) -> ExperimentConfig:
    if args.config:
        return ExperimentConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
    return ExperimentConfig(
        datasets=[DatasetSource(name="synthetic", synthetic=SyntheticSpec())],
        model=model_config_from_args(args),
        train=train_options_from_args(args),
        models=args.model or ["revarb", "gpnarx"],
        seed=args.seed,
    )


def cmd_bench(args) -> int:
    """Run an experiment grid and print the report."""
    config = experiment_from_args(args)
    rows = run_experiment(config, args.out_dir)
    for row in rows:
        ref = "" if row.reference_rmse is None else f" (reference {row.reference_rmse:.4f})"
        print(f"{row.dataset:>12} {row.model:>20}  RMSE {row.rmse:.4f}{ref}  {row.status}")
    return 0 if all(row.status == "ok" for row in rows) else 1


def cmd_gradcheck(args) -> int:
    """Compare analytic gradients with central differences at a random model."""
    if args.data:
        data = load_csv(args.data)
    else:
        data, _ = generate_synthetic(SyntheticSpec(), args.seed, args.n_train, 2)
    data, _, _ = normalize(data, data)
    config = model_config_from_args(args)
    rng = np.random.default_rng(args.seed)
    if config.recognition:
        objective = make_objective(config, data.u, data.y)
        x = objective.initial_vector(args.seed)
        x = x + 0.1 * rng.standard_normal(x.shape[0])
        report = check_objective_gradient(objective.value_and_grad, x, objective.blocks(),
                                          args.step, args.tolerance)
    else:
        state = init_model(config, data.u, data.y, seed=args.seed, kernel_jitter=0.3)
        report = grad_check(state, data.u, data.y, args.step, args.tolerance)
    print(json.dumps({"passed": report.passed, "worst": report.worst}, indent=2))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgp", description="Recurrent GP system identification")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_flags=True):
        p.add_argument("--seed", type=int, default=Config.SEED)
        p.add_argument("--out-dir", default=Config.OUT_DIR)
        if model_flags:
            p.add_argument("--layers", type=int, default=Config.DEFAULT_LAYERS)
            p.add_argument("--lag", type=int, default=Config.DEFAULT_LAG)
            p.add_argument("--input-lag", type=int, default=Config.DEFAULT_LAG)
            p.add_argument("--inducing", type=int, default=Config.DEFAULT_INDUCING)
            p.add_argument("--max-evals", type=int, default=Config.MAX_EVALS)
            p.add_argument("--restarts", type=int, default=1)
            p.add_argument("--recognition", action="store_true")
            p.add_argument("--recognition-depth", type=int, default=1)

    p = sub.add_parser("generate", help="write the synthetic benchmark as CSV")
    common(p, model_flags=False)
    p.add_argument("--n-train", type=int, default=Config.SYNTHETIC_TRAIN)
    p.add_argument("--n-test", type=int, default=Config.SYNTHETIC_TEST)
    p.add_argument("--noise-std", type=float, default=0.0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a model and save it as JSON")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["revarb", "revarb+recognition"], default="revarb")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="free-simulate a saved model")
    common(p, model_flags=False)
    p.add_argument("--model-file", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench", help="run an experiment grid")
    common(p)
    p.add_argument("--config")
    p.add_argument("--model", action="append",
                   choices=["revarb", "revarb+recognition", "gpnarx"])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    common(p)
    p.add_argument("--data")
    p.add_argument("--n-train", type=int, default=25)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main application function."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=Config.LOG_FORMAT)

    ok, message = Config.validate_config()
    if not ok:
        print(f"Configuration error: {message}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"Invalid configuration: {exc}", file=sys.stderr)
        return 2
    except RGPError as exc:
        logger.error("Command %s failed: %s", args.command, create_error_report(exc, args.command))
        print(f"Error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
