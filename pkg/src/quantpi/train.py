"""Quantile training loops, the median/lower/upper network triple, and
walk-forward backtesting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np

from quantpi.data import (
    Dataset,
    DataError,
    NormStats,
    SeriesFrame,
    denormalize_prediction,
    make_windows,
    normalize,
)
from quantpi.loss import OrderingSide, bound_loss, bound_loss_grad, check_alpha
from quantpi.oracle import empirical_quantile
from quantpi.net import (
    AdamState,
    NetworkParams,
    NetworkShape,
    adam_update_,
    backward_batch,
    forward_batch,
    init_params,
)

log = logging.getLogger(__name__)

TRIPLE_FORMAT_VERSION = 1


class DivergenceError(ArithmeticError):
    def __init__(self, epoch: int, message: str = "non-finite loss"):
        super().__init__(f"training diverged at epoch {epoch}: {message}")
        self.epoch = epoch


class InsufficientHistoryError(DataError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-3
    lr_decay: float = 0.97
    max_epochs: int = 100
    batch_size: int = 64
    patience: int = 10
    seed: int = 0
    penalty_lambda: float = 10.0
    validation_fraction: float = 0.15
    steps_per_epoch: int | None = None  # default: training size // batch_size
    quantile_bias_init: bool = False

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0 < self.lr_decay <= 1:
            raise ValueError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.max_epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("max_epochs, batch_size and patience must be >= 1")
        if self.penalty_lambda < 0:
            raise ValueError(f"penalty_lambda must be >= 0, got {self.penalty_lambda}")
        if not 0 < self.validation_fraction < 1:
            raise ValueError(f"validation_fraction must lie in (0, 1), got {self.validation_fraction}")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class IntervalSpec:
    """Nominal interval width; bounds are trained at ``0.5 -/+ beta/2``."""

    beta: float

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError(f"interval width beta must lie in (0, 1), got {self.beta}")

    @property
    def alpha_lower(self) -> float:
        return 0.5 - self.beta / 2

    @property
    def alpha_upper(self) -> float:
        return 0.5 + self.beta / 2


@dataclass(frozen=True)
class Tricks:
    """Switches for the interval-integrity tricks.

    ``fixed_seed``: all three networks share one initialization and batch
    schedule seed. ``penalty``: bound networks pay a hinge for crossing the
    median network's prediction. ``median_feature``: the median prediction is
    an extra input to the bound networks.
    """

    fixed_seed: bool = True
    penalty: bool = True
    median_feature: bool = False

    @classmethod
    def none(cls) -> Tricks:
        return cls(False, False, False)

    def to_dict(self) -> dict:
        return asdict(self)


class PredictionInterval(NamedTuple):
    lower: float
    median: float
    upper: float
    spec: IntervalSpec | None = None


class BacktestPoint(NamedTuple):
    timestamp: int
    interval: PredictionInterval
    actual: float


def split_train_validation(n: int, fraction: float) -> int:
    """Number of leading samples used for training; the tail validates."""
    if n < 2:
        raise InsufficientHistoryError(f"need at least 2 samples to split, got {n}")
    n_val = min(n - 1, max(1, int(round(n * fraction))))
    return n - n_val


def _mean_loss(params, X, y, alpha, reference, side, lam):
    pred = forward_batch(params, X)
    return float(np.mean(bound_loss(y, pred, alpha, reference, side, lam)))


def train_quantile(
    dataset: Dataset,
    shape: NetworkShape,
    alpha: float,
    config: TrainConfig,
    reference=None,
    side: OrderingSide | str | None = None,
    history: list | None = None,
) -> NetworkParams:
    """Fit a network to the ``alpha`` quantile of the targets.

    Mini-batches are drawn with replacement. Each epoch ends with a pass over
    the validation tail (last ``validation_fraction`` of samples, in order);
    training stops after ``patience`` epochs without improvement and the
    best-validation parameters are returned. Initialization and the batch
    schedule both derive from ``config.seed``.

    Args:
        reference: optional per-sample predictions the bound must not cross.
        side: which side of ``reference`` the bound belongs on.
        history: if given, receives one ``(epoch, lr, validation_loss)`` per epoch.

    Raises:
        DivergenceError: if the validation loss or parameters become non-finite.
    """
    alpha = check_alpha(alpha)
    n = len(dataset)
    if n == 0:
        raise DataError("cannot train on an empty dataset")
    if dataset.feature_dim != shape.input_dim:
        raise DataError(f"dataset has {dataset.feature_dim} features, network expects {shape.input_dim}")
    lam = 0.0
    if reference is not None:
        reference = np.asarray(reference, dtype=float).ravel()
        if reference.shape[0] != n:
            raise ValueError(f"reference has {reference.shape[0]} entries for {n} samples")
        if side is None:
            raise ValueError("side is required when a reference is given")
        side = OrderingSide(side)
        lam = config.penalty_lambda
    if lam == 0:
        reference = None

    n_train = split_train_validation(n, config.validation_fraction)
    X_tr, y_tr = dataset.X[:n_train], dataset.y[:n_train]
    X_va, y_va = dataset.X[n_train:], dataset.y[n_train:]
    r_tr = r_va = None
    if reference is not None:
        r_tr, r_va = reference[:n_train], reference[n_train:]

    rng = np.random.default_rng(config.seed)
    params = init_params(shape, config.seed)
    if config.quantile_bias_init:
        # start the constant term at the training targets' quantile
        params.biases[-1][0] = empirical_quantile(y_tr, alpha)
    state = AdamState.for_params(params)
    steps = config.steps_per_epoch or max(1, n_train // config.batch_size)
    bs = config.batch_size

    best_loss = math.inf
    best_params = params.copy()
    stale = 0
    # overflow is detected explicitly below and reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.max_epochs):
            lr = config.lr0 * config.lr_decay**epoch
            for _ in range(steps):
                idx = rng.integers(0, n_train, size=bs)
                pred, cache = forward_batch(params, X_tr[idx], return_cache=True)
                ref = None if r_tr is None else r_tr[idx]
                upstream = bound_loss_grad(y_tr[idx], pred, alpha, ref, side, lam) / bs
                adam_update_(params, state, backward_batch(params, cache, upstream), lr)

            val = _mean_loss(params, X_va, y_va, alpha, r_va, side, lam)
            if not math.isfinite(val) or not params.is_finite():
                raise DivergenceError(epoch + 1)
            if history is not None:
                history.append((epoch + 1, lr, val))
            if val < best_loss:
                best_loss = val
                best_params = params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.debug("early stop at epoch %d (best %.6g)", epoch + 1, best_loss)
                    break
    return best_params


@dataclass
class QuantileModel:
    """A single quantile network together with its normalization."""

    params: NetworkParams
    norm_stats: NormStats
    alpha: float

    def predict(self, X) -> np.ndarray:
        Xn = self.norm_stats.transform_features(np.atleast_2d(np.asarray(X, dtype=float)))
        return denormalize_prediction(forward_batch(self.params, Xn), self.norm_stats)


def fit_quantile(dataset: Dataset, shape: NetworkShape, alpha: float, config: TrainConfig) -> QuantileModel:
    """Normalize, train at ``alpha``, and keep the stats for prediction."""
    norm, stats = normalize(dataset)
    return QuantileModel(train_quantile(norm, shape, alpha, config), stats, alpha)


@dataclass
class TrainedTriple:
    median: NetworkParams
    lower: NetworkParams
    upper: NetworkParams
    spec: IntervalSpec
    median_as_feature: bool
    norm_stats: NormStats
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        d = self.median.shape.input_dim + (1 if self.median_as_feature else 0)
        if self.lower.shape.input_dim != d or self.upper.shape.input_dim != d:
            raise ValueError("bound networks have the wrong input dimension")

    def to_dict(self) -> dict:
        return {
            "format_version": TRIPLE_FORMAT_VERSION,
            "beta": self.spec.beta,
            "median_as_feature": self.median_as_feature,
            "norm_stats": self.norm_stats.to_dict(),
            "config": self.config,
            "median": self.median.to_dict(),
            "lower": self.lower.to_dict(),
            "upper": self.upper.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainedTriple:
        if d.get("format_version") != TRIPLE_FORMAT_VERSION:
            raise ValueError(f"unsupported triple format version {d.get('format_version')!r}")
        return cls(
            NetworkParams.from_dict(d["median"]),
            NetworkParams.from_dict(d["lower"]),
            NetworkParams.from_dict(d["upper"]),
            IntervalSpec(float(d["beta"])),
            bool(d["median_as_feature"]),
            NormStats.from_dict(d["norm_stats"]),
            dict(d.get("config", {})),
        )


def train_triple(
    dataset: Dataset,
    shape: NetworkShape,
    spec: IntervalSpec,
    config: TrainConfig,
    tricks: Tricks = Tricks(),
) -> TrainedTriple:
    """Train the median network, then the lower and upper bound networks."""
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    norm, stats = normalize(dataset)
    shape = shape.with_input_dim(dataset.feature_dim)
    seeds = (config.seed,) * 3 if tricks.fixed_seed else tuple(config.seed + i for i in range(3))

    median = train_quantile(norm, shape, 0.5, replace(config, seed=seeds[0]))
    # frozen: no gradient flows back into the median network
    med_pred = forward_batch(median, norm.X)

    bound_data, bound_shape = norm, shape
    if tricks.median_feature:
        bound_data = norm.with_extra_feature(med_pred, "median")
        bound_shape = shape.with_input_dim(shape.input_dim + 1)
    reference = med_pred if tricks.penalty else None

    lower = train_quantile(
        bound_data, bound_shape, spec.alpha_lower, replace(config, seed=seeds[1]),
        reference, OrderingSide.LOWER if reference is not None else None,
    )
    upper = train_quantile(
        bound_data, bound_shape, spec.alpha_upper, replace(config, seed=seeds[2]),
        reference, OrderingSide.UPPER if reference is not None else None,
    )
    echo = {"train": config.to_dict(), "tricks": tricks.to_dict(), "shape": shape.to_dict()}
    return TrainedTriple(median, lower, upper, spec, tricks.median_feature, stats, echo)


def predict_intervals(triple: TrainedTriple, X) -> list[PredictionInterval]:
    """Vectorized :func:`predict_interval` over the rows of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xn = triple.norm_stats.transform_features(X)
    med = forward_batch(triple.median, Xn)
    Xb = np.column_stack([Xn, med]) if triple.median_as_feature else Xn
    lo = forward_batch(triple.lower, Xb)
    up = forward_batch(triple.upper, Xb)
    s = triple.norm_stats
    lo, med, up = (denormalize_prediction(v, s) for v in (lo, med, up))
    return [PredictionInterval(float(a), float(b), float(c), triple.spec) for a, b, c in zip(lo, med, up)]


def predict_interval(triple: TrainedTriple, x) -> PredictionInterval:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d feature vector, got shape {x.shape}")
    return predict_intervals(triple, x[None, :])[0]


def training_rogue_rate(triple: TrainedTriple, dataset: Dataset) -> float:
    """Fraction of ``dataset`` rows whose median falls outside its own interval."""
    pis = predict_intervals(triple, dataset.X)
    return sum(1 for p in pis if p.median < p.lower or p.median > p.upper) / len(pis)


def fit_lead_triple(
    series: SeriesFrame,
    window: int,
    lead: int,
    cut: int,
    spec: IntervalSpec,
    shape: NetworkShape,
    config: TrainConfig,
    tricks: Tricks = Tricks(),
) -> TrainedTriple:
    """Train a triple predicting ``lead`` days past the window end, using only
    samples whose target position is strictly before ``cut``.
    """
    windows = make_windows(series, window, lead)
    train = windows.subset(windows.target_index < cut)
    if len(train) < 2:
        raise InsufficientHistoryError(
            f"only {len(train)} training windows before position {cut} (window={window}, lead={lead})"
        )
    return train_triple(train, shape, spec, config, tricks)


def rolling_backtest(
    series: SeriesFrame,
    window: int,
    horizon: int,
    spec: IntervalSpec,
    shape: NetworkShape,
    config: TrainConfig,
    tricks: Tricks = Tricks(),
    test_days: int | None = None,
    refit: bool = False,
) -> list[BacktestPoint]:
    """Walk forward over the last ``test_days`` positions in steps of ``horizon``.

    At every cut the next ``horizon`` days are forecast from the window that
    ends the day before the cut, one network triple per lead time (direct
    multi-step forecasting). Triples are trained on targets strictly before
    the first cut and reused, or retrained at every cut when ``refit``.
    """
    if horizon < 1 or window < 1:
        raise ValueError("window and horizon must be >= 1")
    n = len(series)
    if test_days is None:
        test_days = horizon
    if test_days < 1:
        raise ValueError(f"test_days must be >= 1, got {test_days}")
    first_cut = n - test_days
    if first_cut - window - horizon + 1 < 2:
        raise InsufficientHistoryError(
            f"series of length {n} leaves too little history before {test_days} test days"
        )
    windows = {lead: make_windows(series, window, lead) for lead in range(1, horizon + 1)}
    feats = {lead: ds.X for lead, ds in windows.items()}

    triples: dict[int, TrainedTriple] = {}
    out = []
    for cut in range(first_cut, n, horizon):
        if refit or not triples:
            triples = {
                lead: fit_lead_triple(series, window, lead, cut, spec, shape, config, tricks)
                for lead in range(1, horizon + 1)
            }
        for k in range(horizon):
            day = cut + k
            if day >= n:
                break
            lead = k + 1
            row = day - lead - window + 1
            pi = predict_interval(triples[lead], feats[lead][row])
            out.append(BacktestPoint(int(series.timestamps[day]), pi, float(series.values[day])))
    return out
