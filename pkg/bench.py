"""
Benchmark module for the recurrent GP toolkit.
Runs a grid of (dataset, model) cells, free-simulates every trained model on
its test split and writes the report, trace and prediction CSVs.
"""

import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from baseline_gpnarx import fit_gpnarx, simulate_gpnarx
from config import Config, DatasetSource, ExperimentConfig
from datasets import (SYNTHETIC_NOTE, SequenceDataset, denormalize, denormalize_variance,
                      load_source, normalize)
from predictor import free_simulate, rmse, write_layer_trajectories, write_predictions
from revarb_bound import recover_qz
from rgp_model import save_model
from trainer import train_model
from utils import RGPError, create_error_report, format_elapsed_time, sanitize_filename

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["dataset", "model", "rmse", "bound", "wall_time", "config_digest",
                  "reference_rmse", "status", "error", "note"]


@dataclass
class ReportRow:
    """One cell of the experiment grid; RMSE is in original output units."""

    dataset: str
    model: str
    rmse: float
    bound: float
    wall_time: float
    config_digest: str
    reference_rmse: Optional[float] = None
    status: str = "ok"
    error: str = ""
    note: str = ""


@dataclass
class CellOutcome:
    steps: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    bound: float


def reference_rmse(source: DatasetSource, model: str) -> Optional[float]:
    """Published free-simulation RMSE for the matching dataset, if any."""
    key = "artificial" if source.synthetic is not None else source.name.lower()
    table = Config.REFERENCE_RMSE.get(key)
    if table is None:
        return None
    return table["gpnarx" if model == "gpnarx" else "revarb"]


def _run_rgp(config: ExperimentConfig, model: str, train: SequenceDataset,
             test: SequenceDataset, cell_dir: Path) -> CellOutcome:
    model_config = config.model.model_copy(update={"recognition": model == "revarb+recognition"})
    opts = config.train.model_copy(update={"seed": config.seed})
    trained = train_model(model_config, train.u, train.y, opts)
    trained.trace.to_csv(cell_dir / "trace.csv")
    save_model(cell_dir / "model.json", trained.state, train.stats.to_dict(), train.u, train.y,
               trained.recognition)
    qz = recover_qz(trained.state, train.u, train.y)
    # latent windows start from the first true test outputs, as the baseline's do
    init = np.tile(test.y[:model_config.lag], (model_config.hidden_layers, 1))
    moments = free_simulate(trained.state, qz, test.u, init=init)
    write_layer_trajectories(cell_dir / "layers.csv", moments)
    return CellOutcome(moments.steps, moments.output_mean, moments.output_variance, trained.bound)


def _run_gpnarx(config: ExperimentConfig, train: SequenceDataset, test: SequenceDataset,
                cell_dir: Path) -> CellOutcome:
    opts = config.train.model_copy(update={"seed": config.seed})
    narx = fit_gpnarx(train.u, train.y, config.model.lag, config.model.input_lag, opts)
    narx.trace.to_csv(cell_dir / "trace.csv")
    mean, variance = simulate_gpnarx(narx, test.u, test.y[:narx.start])
    return CellOutcome(np.arange(narx.start, len(test)), mean, variance, narx.evidence)


def run_cell(config: ExperimentConfig, source: DatasetSource, model: str, train: SequenceDataset,
             test: SequenceDataset, out_dir: Path) -> ReportRow:
    """
    Train one model on one dataset and score its free simulation.

    Predictions are compared on the steps t >= max(L, Lu) that every model covers.
    """
    start = time.perf_counter()
    cell_dir = out_dir / sanitize_filename(source.name) / sanitize_filename(model)
    cell_dir.mkdir(parents=True, exist_ok=True)
    if model == "gpnarx":
        outcome = _run_gpnarx(config, train, test, cell_dir)
    else:
        outcome = _run_rgp(config, model, train, test, cell_dir)

    common = outcome.steps >= max(config.model.lag, config.model.input_lag)
    stats = train.stats
    steps = outcome.steps[common]
    mean = denormalize(outcome.mean[common], stats)
    variance = denormalize_variance(outcome.variance[common], stats)
    y_true = denormalize(test.y[steps], stats)
    path = write_predictions(cell_dir / "predictions.csv", steps, mean, variance, y_true)
    logger.info("Wrote predictions to %s", path)
    score = rmse(mean, y_true)
    elapsed = time.perf_counter() - start
    logger.info("%s on %s: RMSE %.4f, bound %.4f (%s)", model, source.name, score, outcome.bound,
                format_elapsed_time(start, start + elapsed))
    return ReportRow(dataset=source.name, model=model, rmse=score, bound=outcome.bound,
                     wall_time=elapsed, config_digest=config.digest(),
                     reference_rmse=reference_rmse(source, model),
                     note=SYNTHETIC_NOTE if source.synthetic is not None else "")


def run_experiment(config: ExperimentConfig, out_dir: Optional[str] = None) -> List[ReportRow]:
    """
    Run every (dataset, model) cell of an experiment and write its artifacts.

    A failing cell is reported with status "failed" and does not stop the grid.

    Args:
        config (ExperimentConfig): Datasets, models, structure and budget
        out_dir (Optional[str]): Output directory, Config.OUT_DIR by default

    Returns:
        List[ReportRow]: One row per cell, datasets outer, models inner
    """
    out_dir = Path(out_dir or Config.OUT_DIR)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(config.canonical_json(), encoding="utf-8")
    digest = config.digest()
    rows: List[ReportRow] = []
    for source in config.datasets:
        try:
            train, test = load_source(source, config.seed)
            train, test, _ = normalize(train, test)
        except RGPError as exc:
            report = create_error_report(exc, f"loading dataset {source.name}")
            logger.error("Dataset %s failed: %s", source.name, report)
            rows += [ReportRow(source.name, model, float("nan"), float("nan"), 0.0, digest,
                               reference_rmse(source, model), "failed", report["error_message"])
                     for model in config.models]
            continue
        for model in config.models:
            start = time.perf_counter()
            try:
                rows.append(run_cell(config, source, model, train, test, out_dir))
            except (RGPError, FloatingPointError, np.linalg.LinAlgError) as exc:
                report = create_error_report(exc, f"{model} on {source.name}")
                logger.error("Cell %s/%s failed: %s", source.name, model, report)
                rows.append(ReportRow(source.name, model, float("nan"), float("nan"),
                                      time.perf_counter() - start, digest,
                                      reference_rmse(source, model), "failed",
                                      report["error_message"]))
    path = write_report(out_dir / "report.csv", rows)
    logger.info("Wrote report with %d rows to %s", len(rows), path)
    return rows


def write_report(path: Path, rows: List[ReportRow]) -> Path:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=REPORT_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path
