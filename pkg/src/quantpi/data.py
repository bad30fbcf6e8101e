"""Datasets, daily series, sliding windows, synthetic generators and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from quantpi.oracle import DistributionSpec, sample

VARIANCE_FLOOR = 1e-12


class DataError(ValueError):
    """Base class for problems with input data."""


class MissingFileError(DataError, FileNotFoundError):
    pass


class EmptyInputError(DataError):
    pass


class MalformedRowError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonNumericCellError(MalformedRowError):
    pass


class TimestampOrderError(DataError):
    pass


class SeriesTooShortError(DataError):
    pass


class Sample(NamedTuple):
    features: np.ndarray
    target: float


@dataclass
class Dataset:
    """Feature matrix ``X`` (n, d) and targets ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    target_index: np.ndarray | None = None  # series position of each target, if windowed

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        if self.X.shape[0] != self.y.shape[0]:
            raise DataError(f"{self.X.shape[0]} feature rows but {self.y.shape[0]} targets")
        if self.X.shape[1] < 1:
            raise DataError("datasets need at least one feature")
        if not self.feature_names:
            self.feature_names = [f"x{i}" for i in range(self.X.shape[1])]
        if len(self.feature_names) != self.X.shape[1]:
            raise DataError("feature_names length does not match feature_dim")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise DataError("dataset contains non-finite values")

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def samples(self) -> Iterator[Sample]:
        for x, y in zip(self.X, self.y):
            yield Sample(x, float(y))

    def subset(self, idx) -> Dataset:
        ti = None if self.target_index is None else self.target_index[idx]
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names), ti)

    def with_extra_feature(self, column, name: str) -> Dataset:
        X = np.column_stack([self.X, np.asarray(column, dtype=float)])
        return Dataset(X, self.y, [*self.feature_names, name], self.target_index)


@dataclass
class SeriesFrame:
    """Daily series: integer day index, target values, exogenous columns."""

    timestamps: np.ndarray
    values: np.ndarray
    exogenous: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        self.exogenous = {k: np.asarray(v, dtype=float) for k, v in self.exogenous.items()}
        n = self.values.shape[0]
        if self.timestamps.shape[0] != n or any(v.shape[0] != n for v in self.exogenous.values()):
            raise DataError("series columns have unequal lengths")
        if n > 1 and np.any(np.diff(self.timestamps) <= 0):
            raise TimestampOrderError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def exog_names(self) -> list[str]:
        return list(self.exogenous)

    def exog_matrix(self) -> np.ndarray:
        if not self.exogenous:
            return np.zeros((len(self), 0))
        return np.column_stack([self.exogenous[k] for k in self.exogenous])

    def with_values(self, values) -> SeriesFrame:
        return SeriesFrame(self.timestamps.copy(), np.asarray(values, dtype=float), dict(self.exogenous))


def make_windows(series: SeriesFrame, window: int, horizon: int) -> Dataset:
    """One sample per position: ``window`` recent values plus exogenous columns
    at the target date; the target sits ``horizon`` steps past the window end.
    """
    if window < 1 or horizon < 1:
        raise ValueError(f"window and horizon must be >= 1, got {window}, {horizon}")
    n = len(series)
    count = n - window - horizon + 1
    if count < 1:
        raise SeriesTooShortError(
            f"series of length {n} is too short for window={window}, horizon={horizon}"
        )
    starts = np.arange(count)
    lags = series.values[starts[:, None] + np.arange(window)[None, :]]
    target_idx = starts + window - 1 + horizon
    exog = series.exog_matrix()[target_idx]
    names = [f"lag{window - j}" for j in range(window)] + series.exog_names
    return Dataset(np.hstack([lags, exog]), series.values[target_idx], names, target_idx)


def gen_linear(n: int, y0: float, w, noise: DistributionSpec, seed: int) -> Dataset:
    """``y = y0 + w . x + z`` with ``x ~ U[-1, 1]^d`` and ``z`` i.i.d. from ``noise``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    w = np.atleast_1d(np.asarray(w, dtype=float))
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, w.size))
    z = sample(noise, n, rng)
    return Dataset(X, y0 + X @ w + z)


def seasonal_profile(period: int) -> np.ndarray:
    """Zero-mean periodic shape with unit amplitude, one value per phase."""
    phase = 2.0 * np.pi * np.arange(period) / period
    return np.sin(phase)


def gen_sales_series(
    days: int,
    period: int = 7,
    base: float = 20.0,
    amplitude: float = 5.0,
    trend: float = 0.0,
    noise_scale: float = 2.0,
    heteroscedastic: bool = True,
    seed: int = 0,
    special_rate: float = 0.03,
    special_effect: float = 0.0,
) -> SeriesFrame:
    """Synthetic daily sales with a periodic profile, trend and Laplace noise.

    ``value(t) = max(0, m(t) + eps_t)`` with ``m(t) = base + trend*t +
    amplitude*seasonal(t mod period) + special_effect*special(t)``. The noise
    scale is ``noise_scale`` or, when ``heteroscedastic``, ``noise_scale * (1 +
    max(m(t), 0) / |base|)`` so busy days are noisier.

    Exogenous columns: a one-hot ``dow{k}`` per phase and a ``special`` flag.
    """
    if period < 1:
        raise ValueError(f"period must be >= 1, got {period}")
    if days < 2 * period:
        raise ValueError(f"days must be >= 2*period, got days={days}, period={period}")
    if not noise_scale > 0:
        raise ValueError(f"noise_scale must be positive, got {noise_scale}")
    rng = np.random.default_rng(seed)
    t = np.arange(days)
    phase = t % period
    special = (rng.random(days) < special_rate).astype(float)
    mean = base + trend * t + amplitude * seasonal_profile(period)[phase] + special_effect * special
    scale = np.full(days, float(noise_scale))
    if heteroscedastic:
        scale = scale * (1.0 + np.maximum(mean, 0.0) / max(abs(base), 1e-12))
    eps = scale * sample(DistributionSpec("laplace"), days, rng)
    values = np.maximum(0.0, mean + eps)
    exog = {f"dow{k}": (phase == k).astype(float) for k in range(period)}
    exog["special"] = special
    return SeriesFrame(t, values, exog)


@dataclass
class NormStats:
    feature_mean: np.ndarray
    feature_std: np.ndarray
    target_mean: float
    target_std: float

    def transform_features(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.feature_mean) / self.feature_std

    def transform_target(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_std

    def to_dict(self) -> dict:
        return {
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> NormStats:
        return cls(
            np.asarray(d["feature_mean"], dtype=float),
            np.asarray(d["feature_std"], dtype=float),
            float(d["target_mean"]),
            float(d["target_std"]),
        )


def normalize(dataset: Dataset) -> tuple[Dataset, NormStats]:
    """Affine-map every feature and the target to zero mean and unit variance.

    Columns with variance below the floor keep a unit divisor, so a constant
    column maps to zeros.
    """
    if len(dataset) == 0:
        raise DataError("cannot normalize an empty dataset")
    mu = dataset.X.mean(axis=0)
    var = dataset.X.var(axis=0)
    sd = np.where(var > VARIANCE_FLOOR, np.sqrt(var), 1.0)
    y_mu = float(dataset.y.mean())
    y_var = float(dataset.y.var())
    y_sd = math.sqrt(y_var) if y_var > VARIANCE_FLOOR else 1.0
    stats = NormStats(mu, sd, y_mu, y_sd)
    X = stats.transform_features(dataset.X)
    # constant columns are exactly zero, not rounding residue
    X[:, var <= VARIANCE_FLOOR] = 0.0
    out = Dataset(X, stats.transform_target(dataset.y), list(dataset.feature_names), dataset.target_index)
    return out, stats


def denormalize_prediction(value, stats: NormStats):
    """Map a normalized-scale prediction back to the target scale."""
    out = np.asarray(value, dtype=float) * stats.target_std + stats.target_mean
    return float(out) if out.ndim == 0 else out


def save_csv(frame: SeriesFrame, path) -> None:
    """Write ``t,y[,exog...]`` with round-trip float formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "y", *frame.exog_names])
        exog = frame.exog_matrix()
        for i in range(len(frame)):
            writer.writerow(
                [int(frame.timestamps[i]), repr(float(frame.values[i])), *(repr(float(v)) for v in exog[i])]
            )


def _read_rows(path):
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(c.strip() for c in r)]
    if not rows:
        raise EmptyInputError(f"{path} is empty")
    return rows


def _parse_float(cell: str, line: int, column: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise NonNumericCellError(line, f"column {column!r} is not numeric: {cell!r}") from None
    if not math.isfinite(v):
        raise NonNumericCellError(line, f"column {column!r} is not finite: {cell!r}")
    return v


def load_csv(path) -> SeriesFrame:
    """Read a ``t,y[,name...]`` series CSV written by :func:`save_csv` or by hand."""
    rows = _read_rows(path)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    if header[:2] != ["t", "y"]:
        raise MalformedRowError(header_line, f"header must start with 't,y', got {','.join(header)!r}")
    if len(rows) == 1:
        raise EmptyInputError(f"{path} has a header but no data rows")
    names = header[2:]
    ts, ys, ex = [], [], []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise MalformedRowError(line, f"expected {len(header)} fields, got {len(row)}")
        try:
            t = int(row[0])
        except ValueError:
            raise NonNumericCellError(line, f"column 't' is not an integer: {row[0]!r}") from None
        ts.append(t)
        ys.append(_parse_float(row[1], line, "y"))
        ex.append([_parse_float(c, line, n) for c, n in zip(row[2:], names)])
        if len(ts) > 1 and ts[-1] <= ts[-2]:
            raise TimestampOrderError(f"line {line}: timestamp {ts[-1]} does not increase")
    ex = np.asarray(ex, dtype=float).reshape(len(ts), len(names))
    return SeriesFrame(np.asarray(ts), np.asarray(ys), {n: ex[:, j] for j, n in enumerate(names)})


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write ``y,<feature names>``; used for non-temporal generated data."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", *dataset.feature_names])
        for x, y in zip(dataset.X, dataset.y):
            writer.writerow([repr(float(y)), *(repr(float(v)) for v in x)])


def load_dataset_csv(path) -> Dataset:
    rows = _read_rows(path)
    header_line, header = rows[0]
    header = [h.strip() for h in header]
    if not header or header[0] != "y" or len(header) < 2:
        raise MalformedRowError(header_line, "dataset header must be 'y,<feature>...'")
    if len(rows) == 1:
        raise EmptyInputError(f"{path} has a header but no data rows")
    data = []
    for line, row in rows[1:]:
        if len(row) != len(header):
            raise MalformedRowError(line, f"expected {len(header)} fields, got {len(row)}")
        data.append([_parse_float(c, line, n) for c, n in zip(row, header)])
    arr = np.asarray(data)
    return Dataset(arr[:, 1:], arr[:, 0], header[1:])


def csv_kind(path) -> str:
    """``'series'`` for ``t,y,...`` files, ``'dataset'`` for ``y,...`` files."""
    _, header = _read_rows(path)[0]
    first = header[0].strip() if header else ""
    if first == "t":
        return "series"
    if first == "y":
        return "dataset"
    raise MalformedRowError(1, f"unrecognised header starting with {first!r}")
