"""
Dataset module for the recurrent GP toolkit.
CSV ingestion of (u, y) sequences, the synthetic nonlinear benchmark and
train-split normalization.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from config import Config, DatasetSource, SyntheticSpec
from utils import DataError, GenerationError, StructuralError

logger = logging.getLogger(__name__)

SYNTHETIC_NOTE = "stand-in system, not identical to the published artificial benchmark"


@dataclass(frozen=True)
class NormalizationStats:
    u_mean: float
    u_std: float
    y_mean: float
    y_std: float

    def to_dict(self) -> Dict[str, float]:
        return {"u_mean": self.u_mean, "u_std": self.u_std, "y_mean": self.y_mean, "y_std": self.y_std}

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> "NormalizationStats":
        return cls(**{k: float(data[k]) for k in ("u_mean", "u_std", "y_mean", "y_std")})


@dataclass(frozen=True)
class SequenceDataset:
    """Single-input single-output sequence."""

    name: str
    u: np.ndarray
    y: np.ndarray
    stats: Optional[NormalizationStats] = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        if u.shape != y.shape:
            raise StructuralError(f"u and y differ in length ({u.shape[0]} vs {y.shape[0]})")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]


def _is_number(token: str) -> bool:
    try:
        float(token)
    except (TypeError, ValueError):
        return False
    return True


def _to_float(token) -> float:
    try:
        return float(token)
    except (TypeError, ValueError):
        return np.nan


def load_csv(path: str, name: Optional[str] = None) -> SequenceDataset:
    """
    Read a two-column (u, y) CSV with or without a header row.

    A first row with no numeric field is taken as the header.

    Args:
        path (str): CSV file
        name (Optional[str]): Dataset name, the file stem by default

    Returns:
        SequenceDataset: Parsed sequences
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    try:
        raw = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True,
                          keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise DataError(f"could not parse {path}: {exc}") from exc
    if raw.shape[1] != 2:
        raise DataError(f"{path} has {raw.shape[1]} columns, expected 2 (u, y)")

    first_line = 1
    if not any(_is_number(token) for token in raw.iloc[0]):
        raw = raw.iloc[1:]
        first_line = 2
    if raw.empty:
        raise DataError(f"{path} has no data rows")

    # float() rounds correctly, so written values read back bit for bit
    values = np.vectorize(_to_float, otypes=[float])(raw.to_numpy())
    bad = ~np.all(np.isfinite(values), axis=1)
    if np.any(bad):
        row = int(np.flatnonzero(bad)[0])
        line = first_line + row
        raise DataError(f"{path}, line {line}: non-numeric or non-finite value "
                        f"{list(raw.iloc[row])}", line=line)
    return SequenceDataset(name=name or path.stem, u=values[:, 0], y=values[:, 1])


def write_csv(path: str, dataset: SequenceDataset, header: bool = True) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"u": dataset.u, "y": dataset.y}).to_csv(path, index=False, header=header,
                                                          float_format="%.17g")
    logger.info("Wrote %d samples to %s", len(dataset), path)
    return path


def split(dataset: SequenceDataset, train_fraction: float) -> Tuple[SequenceDataset, SequenceDataset]:
    """First ``train_fraction`` of the samples for training, the rest for testing."""
    n_train = int(np.floor(len(dataset) * train_fraction))
    if n_train < 2 or len(dataset) - n_train < 2:
        raise DataError(f"{dataset.name}: split at {train_fraction} leaves too few samples")
    return (SequenceDataset(dataset.name, dataset.u[:n_train], dataset.y[:n_train]),
            SequenceDataset(dataset.name, dataset.u[n_train:], dataset.y[n_train:]))


def default_system(y1: float, y2: float, u1: float) -> float:
    """y_i from y_{i-1}, y_{i-2} and u_{i-1}."""
    return y1 * y2 * (y1 + 2.5) / (1.0 + y1 ** 2 + y2 ** 2) + u1


SYSTEMS = {"default": default_system}


def simulate_system(u: np.ndarray, system: str = "default",
                    initial: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """
    Noise-free trajectory of a second-order recurrence driven by u.

    Args:
        u (np.ndarray): Input sequence
        system (str): Name of the recurrence
        initial (Tuple[float, float]): y_0 and y_1

    Returns:
        np.ndarray: Output sequence of the same length as u
    """
    step = SYSTEMS[system]
    u = np.asarray(u, dtype=float).ravel()
    y = np.zeros(u.shape[0])
    y[:2] = initial[:min(2, u.shape[0])]
    for i in range(2, u.shape[0]):
        y[i] = step(y[i - 1], y[i - 2], u[i - 1])
        if not abs(y[i]) <= Config.SYNTHETIC_DIVERGENCE_LIMIT:
            raise GenerationError(f"trajectory diverged at step {i} (|y| = {abs(y[i]):.3e})")
    return y


def piecewise_random_input(length: int, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform levels in [-amplitude, amplitude] held for a random number of steps."""
    u = np.empty(length)
    pos = 0
    while pos < length:
        hold = int(rng.integers(spec.hold_min, spec.hold_max + 1))
        u[pos:pos + hold] = rng.uniform(-spec.input_amplitude, spec.input_amplitude)
        pos += hold
    return u


def generate_synthetic(spec: SyntheticSpec, seed: int, n_train: int = Config.SYNTHETIC_TRAIN,
                       n_test: int = Config.SYNTHETIC_TEST,
                       name: str = "synthetic") -> Tuple[SequenceDataset, SequenceDataset]:
    """
    One seeded trajectory of the synthetic system, split into train and test.

    Args:
        spec (SyntheticSpec): System, input signal and noise settings
        seed (int): Seed of the input signal and observation noise
        n_train (int): Training samples
        n_test (int): Test samples
        name (str): Dataset name

    Returns:
        Tuple[SequenceDataset, SequenceDataset]: Training and test sequences
    """
    if n_train < 2 or n_test < 2:
        raise StructuralError("n_train and n_test must be at least 2")
    rng = np.random.default_rng(seed)
    u = piecewise_random_input(n_train + n_test, spec, rng)
    y = simulate_system(u, spec.system)
    if spec.noise_std > 0:
        y = y + spec.noise_std * rng.standard_normal(y.shape[0])
    logger.info("Generated %d synthetic samples (seed %d)", y.shape[0], seed)
    return (SequenceDataset(name, u[:n_train], y[:n_train]),
            SequenceDataset(name, u[n_train:], y[n_train:]))


def normalize(train: SequenceDataset, test: SequenceDataset) -> Tuple[SequenceDataset, SequenceDataset, NormalizationStats]:
    """
    Zero-mean unit-std scaling with statistics of the training split only.

    Args:
        train (SequenceDataset): Training split
        test (SequenceDataset): Test split

    Returns:
        Tuple: normalized train, normalized test, statistics
    """
    stats = NormalizationStats(u_mean=float(np.mean(train.u)), u_std=float(np.std(train.u)),
                               y_mean=float(np.mean(train.y)), y_std=float(np.std(train.y)))
    for channel, std, values in (("u", stats.u_std, train.u), ("y", stats.y_std, train.y)):
        if not std > 1e-12 * max(1.0, float(np.max(np.abs(values)))):
            raise DataError(f"{train.name}: training channel {channel} has zero variance")

    def scale(ds):
        return SequenceDataset(ds.name, (ds.u - stats.u_mean) / stats.u_std,
                               (ds.y - stats.y_mean) / stats.y_std, stats)

    return scale(train), scale(test), stats


def denormalize(values: np.ndarray, stats: NormalizationStats, channel: str = "y") -> np.ndarray:
    """Map normalized values of a channel back to original units."""
    mean, std = (stats.y_mean, stats.y_std) if channel == "y" else (stats.u_mean, stats.u_std)
    return np.asarray(values, dtype=float) * std + mean


def denormalize_variance(variances: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(variances, dtype=float) * stats.y_std ** 2


def load_source(source: DatasetSource, seed: int) -> Tuple[SequenceDataset, SequenceDataset]:
    """Training and test splits of a configured dataset."""
    if source.synthetic is not None:
        return generate_synthetic(source.synthetic, seed, source.n_train, source.n_test, source.name)
    csv_path = Path(source.csv_path)
    if not csv_path.is_absolute() and not csv_path.exists():
        csv_path = Path(Config.DATA_DIR) / csv_path
    return split(load_csv(str(csv_path), name=source.name), source.train_fraction)
