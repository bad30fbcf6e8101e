import json
from dataclasses import replace

import numpy as np
import pytest

from quantpi.data import Dataset, gen_linear, gen_sales_series, make_windows, normalize
from quantpi.loss import OrderingSide, pinball
from quantpi.net import NetworkShape, forward_batch, init_params
from quantpi.oracle import DistributionSpec, analytic_quantile, empirical_quantile, sample
from quantpi.train import (
    DivergenceError,
    InsufficientHistoryError,
    IntervalSpec,
    TrainConfig,
    TrainedTriple,
    Tricks,
    fit_lead_triple,
    fit_quantile,
    predict_interval,
    predict_intervals,
    rolling_backtest,
    split_train_validation,
    train_quantile,
    train_triple,
    training_rogue_rate,
)

LAPLACE = DistributionSpec("laplace")
BIAS_ONLY = NetworkShape(1)
FAST = TrainConfig(max_epochs=15, batch_size=32, steps_per_epoch=40)


def constant_dataset(targets):
    """Targets paired with a single all-zero feature, so only the bias learns."""
    y = np.asarray(targets, dtype=float)
    return Dataset(np.zeros((len(y), 1)), y)


@pytest.fixture(scope="module")
def laplace_constant():
    return constant_dataset(sample(LAPLACE, 20_000, 123))


@pytest.fixture(scope="module")
def linear_triple():
    ds = gen_linear(20_000, 2.0, [3.0], LAPLACE, 7)
    return train_triple(ds, NetworkShape(1), IntervalSpec(0.8), TrainConfig(), Tricks.none())


@pytest.fixture(scope="module")
def small_series():
    return gen_sales_series(220, 7, trend=0.0, seed=5)


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.lr0, c.max_epochs, c.patience, c.penalty_lambda) == (1e-3, 100, 10, 10.0)

    @pytest.mark.parametrize(
        "field, value",
        [("lr0", 0.0), ("lr_decay", 1.5), ("max_epochs", 0), ("batch_size", 0), ("penalty_lambda", -1.0),
         ("validation_fraction", 1.0)],
    )
    def test_rejects(self, field, value):
        with pytest.raises(ValueError):
            replace(TrainConfig(), **{field: value})

    def test_round_trip(self):
        c = TrainConfig(seed=4, steps_per_epoch=12, quantile_bias_init=True)
        assert TrainConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c

    def test_interval_levels(self):
        s = IntervalSpec(0.8)
        assert s.alpha_lower == pytest.approx(0.1) and s.alpha_upper == pytest.approx(0.9)
        with pytest.raises(ValueError):
            IntervalSpec(1.0)

    def test_split(self):
        assert split_train_validation(100, 0.15) == 85
        assert split_train_validation(2, 0.15) == 1
        with pytest.raises(InsufficientHistoryError):
            split_train_validation(1, 0.15)


class TestTrainQuantile:
    def test_median_recovery(self, laplace_constant):
        p = train_quantile(laplace_constant, BIAS_ONLY, 0.5, TrainConfig())
        assert abs(p.biases[0][0]) <= 0.05

    def test_upper_quantile_recovery(self, laplace_constant):
        p = train_quantile(laplace_constant, BIAS_ONLY, 0.95, TrainConfig())
        assert abs(p.biases[0][0] - analytic_quantile(LAPLACE, 0.95)) <= 0.08

    def test_constant_model_loss_matches_oracle(self, laplace_constant):
        y = laplace_constant.y
        for alpha in (0.25, 0.9):
            p = train_quantile(laplace_constant, BIAS_ONLY, alpha, TrainConfig())
            got = np.mean(pinball(y, forward_batch(p, laplace_constant.X), alpha))
            best = np.mean(pinball(y, empirical_quantile(y, alpha), alpha))
            assert got - best <= 1e-3

    def test_zero_lambda_equals_no_penalty(self, small_series):
        ds, _ = normalize(make_windows(small_series, 14, 1))
        shape = NetworkShape(ds.feature_dim, (4,))
        ref = np.zeros(len(ds))
        plain = train_quantile(ds, shape, 0.9, FAST)
        zero = train_quantile(ds, shape, 0.9, replace(FAST, penalty_lambda=0.0), ref, OrderingSide.UPPER)
        assert plain.to_json() == zero.to_json()

    def test_deterministic(self, small_series):
        ds, _ = normalize(make_windows(small_series, 14, 1))
        shape = NetworkShape(ds.feature_dim, (4,))
        assert train_quantile(ds, shape, 0.3, FAST).to_json() == train_quantile(ds, shape, 0.3, FAST).to_json()

    def test_monotone_in_alpha(self):
        ds = constant_dataset(sample(LAPLACE, 3000, 8))
        preds = [train_quantile(ds, BIAS_ONLY, a, TrainConfig()).biases[0][0] for a in (0.1, 0.3, 0.5, 0.7, 0.9)]
        assert all(a <= b for a, b in zip(preds, preds[1:]))

    def test_returns_best_validation_params(self, small_series):
        ds, _ = normalize(make_windows(small_series, 14, 1))
        shape = NetworkShape(ds.feature_dim, (8,))
        cfg = replace(FAST, max_epochs=40, patience=3)
        history = []
        p = train_quantile(ds, shape, 0.7, cfg, history=history)
        n_train = split_train_validation(len(ds), cfg.validation_fraction)
        val = np.mean(pinball(ds.y[n_train:], forward_batch(p, ds.X[n_train:]), 0.7))
        assert val == pytest.approx(min(h[2] for h in history), rel=1e-12)
        assert len(history) < cfg.max_epochs or all(history[i][2] > history[i + 1][2] for i in range(len(history) - 1))

    def test_lr_schedule(self, small_series):
        ds, _ = normalize(make_windows(small_series, 14, 1))
        history = []
        train_quantile(ds, NetworkShape(ds.feature_dim), 0.5, replace(FAST, max_epochs=5, patience=100), history=history)
        assert [h[1] for h in history] == pytest.approx([1e-3 * 0.97**k for k in range(5)])

    def test_divergence_names_epoch(self):
        # per-sample losses are finite but their sum overflows
        ds = constant_dataset(np.tile([1.5e308, -1.5e308], 50))
        with pytest.raises(DivergenceError) as exc:
            train_quantile(ds, BIAS_ONLY, 0.5, FAST)
        assert exc.value.epoch == 1

    def test_preconditions(self, small_series):
        ds = constant_dataset(np.arange(10.0))
        with pytest.raises(ValueError):
            train_quantile(ds, BIAS_ONLY, 0.5, FAST, reference=np.zeros(3), side="upper_bound")
        with pytest.raises(ValueError):
            train_quantile(ds, BIAS_ONLY, 0.5, FAST, reference=np.zeros(10))
        with pytest.raises(ValueError):
            train_quantile(ds, NetworkShape(2), 0.5, FAST)


class TestTriple:
    def test_linear_intercepts_and_slopes(self, linear_triple):
        lo, med, up, _ = predict_interval(linear_triple, [0.0])
        assert med == pytest.approx(2.0, abs=0.15)
        assert lo == pytest.approx(2.0 + analytic_quantile(LAPLACE, 0.1), abs=0.15)
        assert up == pytest.approx(2.0 + analytic_quantile(LAPLACE, 0.9), abs=0.15)
        pis = predict_intervals(linear_triple, [[0.0], [1.0]])
        for k in range(3):
            assert pis[1][k] - pis[0][k] == pytest.approx(3.0, abs=0.1)

    def test_predict_is_deterministic(self, linear_triple):
        assert predict_interval(linear_triple, [0.3]) == predict_interval(linear_triple, [0.3])

    def test_dimension_mismatch(self, linear_triple):
        with pytest.raises(ValueError):
            predict_interval(linear_triple, [0.0, 1.0])
        with pytest.raises(ValueError):
            predict_interval(linear_triple, [[0.0]])

    def test_identical_networks_collapse(self, linear_triple):
        p = init_params(NetworkShape(1), 0)
        p.weights[0][:] = 0.0
        p.biases[0][:] = 0.4
        t = TrainedTriple(p, p.copy(), p.copy(), IntervalSpec(0.5), False, linear_triple.norm_stats)
        lo, med, up, _ = predict_interval(t, [1.7])
        assert lo == med == up

    def test_tricks_off_is_three_independent_runs(self, small_series):
        ds = make_windows(small_series, 14, 1)
        shape = NetworkShape(ds.feature_dim, (4,))
        spec = IntervalSpec(0.8)
        t = train_triple(ds, shape, spec, FAST, Tricks.none())
        norm, _ = normalize(ds)
        for params, alpha, offset in ((t.median, 0.5, 0), (t.lower, spec.alpha_lower, 1), (t.upper, spec.alpha_upper, 2)):
            solo = train_quantile(norm, shape, alpha, replace(FAST, seed=FAST.seed + offset))
            assert params.to_json() == solo.to_json()

    def test_fixed_seed_shares_init_and_repeats(self, small_series):
        ds = make_windows(small_series, 14, 1)
        shape = NetworkShape(ds.feature_dim, (4,))
        tricks = Tricks(fixed_seed=True, penalty=False)
        a = train_triple(ds, shape, IntervalSpec(0.8), FAST, tricks)
        b = train_triple(ds, shape, IntervalSpec(0.8), FAST, tricks)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
        norm, _ = normalize(ds)
        lower = train_quantile(norm, shape, IntervalSpec(0.8).alpha_lower, FAST)
        assert a.lower.to_json() == lower.to_json()

    def test_median_feature_widens_bound_inputs(self, small_series):
        ds = make_windows(small_series, 14, 1)
        t = train_triple(ds, NetworkShape(1, (4,)), IntervalSpec(0.8), FAST, Tricks(median_feature=True))
        assert t.lower.shape.input_dim == t.median.shape.input_dim + 1 == ds.feature_dim + 1
        pi = predict_interval(t, ds.X[0])
        assert np.isfinite([pi.lower, pi.median, pi.upper]).all()

    @pytest.mark.parametrize("hidden", [(), (8,)])
    def test_penalty_reduces_training_rogue_rate(self, small_series, hidden):
        ds = make_windows(small_series, 14, 1)
        # rows the optimizer steps on; the validation tail never sees the penalty gradient
        trained = ds.subset(np.arange(len(ds)) < split_train_validation(len(ds), 0.15))
        shape = NetworkShape(ds.feature_dim, hidden)
        cfg = TrainConfig(batch_size=16, steps_per_epoch=200, quantile_bias_init=True)
        spec = IntervalSpec(0.7)
        on = train_triple(ds, shape, spec, cfg, Tricks(penalty=True))
        off = train_triple(ds, shape, spec, replace(cfg, penalty_lambda=0.0), Tricks(penalty=True))
        assert training_rogue_rate(on, trained) <= training_rogue_rate(off, trained)

    def test_json_round_trip(self, linear_triple):
        back = TrainedTriple.from_dict(json.loads(json.dumps(linear_triple.to_dict())))
        assert predict_interval(back, [0.5]) == predict_interval(linear_triple, [0.5])
        d = linear_triple.to_dict()
        d["format_version"] = 2
        with pytest.raises(ValueError):
            TrainedTriple.from_dict(d)

    def test_fit_quantile_denormalizes(self):
        ds = gen_linear(5000, 10.0, [3.0], LAPLACE, 2)
        m = fit_quantile(ds, NetworkShape(1), 0.5, TrainConfig())
        assert m.predict([[0.0]])[0] == pytest.approx(10.0, abs=0.15)


class TestBacktest:
    SHAPE = NetworkShape(1)
    CFG = replace(FAST, max_epochs=3)

    def test_daily_count(self, small_series):
        pts = rolling_backtest(small_series, 14, 1, IntervalSpec(0.8), self.SHAPE, self.CFG, test_days=76)
        assert len(pts) == 76
        assert [p.timestamp for p in pts] == list(small_series.timestamps[-76:])
        assert [p.actual for p in pts] == list(small_series.values[-76:])

    def test_weekly_blocks(self, small_series, monkeypatch):
        import quantpi.train as train_mod

        calls = []
        real = train_mod.fit_lead_triple

        def spy(series, window, lead, cut, *a, **k):
            calls.append(cut)
            return real(series, window, lead, cut, *a, **k)

        monkeypatch.setattr(train_mod, "fit_lead_triple", spy)
        pts = rolling_backtest(small_series, 14, 7, IntervalSpec(0.8), self.SHAPE, self.CFG, test_days=70, refit=True)
        assert len(pts) == 70
        assert len(set(calls)) == 10

    def test_no_lookahead(self, small_series):
        cut = 150
        a = fit_lead_triple(small_series, 14, 3, cut, IntervalSpec(0.8), self.SHAPE, self.CFG)
        values = small_series.values.copy()
        values[cut:] += 1000.0
        b = fit_lead_triple(small_series.with_values(values), 14, 3, cut, IntervalSpec(0.8), self.SHAPE, self.CFG)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_insufficient_history(self, small_series):
        with pytest.raises(InsufficientHistoryError):
            rolling_backtest(small_series, 14, 1, IntervalSpec(0.8), self.SHAPE, self.CFG, test_days=210)
