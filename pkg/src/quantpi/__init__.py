"""Prediction intervals from networks trained on the pinball loss."""

from quantpi.loss import OrderingSide, bound_loss, ordering_penalty, pinball, pinball_grad
from quantpi.net import NetworkParams, NetworkShape, backward, forward, init_params
from quantpi.oracle import DistributionSpec, analytic_quantile, empirical_quantile, minimize_loss_grid
from quantpi.train import (
    IntervalSpec,
    PredictionInterval,
    TrainConfig,
    TrainedTriple,
    Tricks,
    predict_interval,
    rolling_backtest,
    train_quantile,
    train_triple,
)

__version__ = "0.1.0"
