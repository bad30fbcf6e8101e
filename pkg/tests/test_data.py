import numpy as np
import pytest

from quantpi.data import (
    Dataset,
    EmptyInputError,
    MalformedRowError,
    MissingFileError,
    NonNumericCellError,
    SeriesFrame,
    SeriesTooShortError,
    TimestampOrderError,
    csv_kind,
    denormalize_prediction,
    gen_linear,
    gen_sales_series,
    load_csv,
    load_dataset_csv,
    make_windows,
    normalize,
    save_csv,
    save_dataset_csv,
)
from quantpi.oracle import DistributionSpec

LAPLACE = DistributionSpec("laplace")


def ramp(n, **exog):
    return SeriesFrame(np.arange(n), np.arange(1.0, n + 1), exog)


class TestWindows:
    def test_boundary_count(self):
        ds = make_windows(ramp(15), 14, 1)
        assert len(ds) == 1
        assert ds.y[0] == 15.0

    def test_construction(self):
        ds = make_windows(ramp(20), 3, 1)
        np.testing.assert_array_equal(ds.X[0], [1.0, 2.0, 3.0])
        assert ds.y[0] == 4.0

    def test_week_horizon(self):
        ds = make_windows(ramp(21), 14, 7)
        assert len(ds) == 1 and ds.y[0] == 21.0
        assert ds.target_index.tolist() == [20]

    @pytest.mark.parametrize("n, w, h", [(30, 14, 1), (30, 5, 7), (100, 14, 14), (16, 1, 1)])
    def test_sample_count(self, n, w, h):
        assert len(make_windows(ramp(n), w, h)) == n - w - h + 1

    def test_exogenous_at_target_date(self):
        flag = np.zeros(10)
        flag[6] = 1.0
        ds = make_windows(ramp(10, special=flag), 3, 2)
        # sample 2 covers values 3..5 (positions 2..4); its target is position 6
        assert ds.target_index[2] == 6
        assert ds.X[2, -1] == 1.0
        assert ds.feature_names == ["lag3", "lag2", "lag1", "special"]

    def test_too_short(self):
        with pytest.raises(SeriesTooShortError):
            make_windows(ramp(14), 14, 1)


class TestLinear:
    def test_near_deterministic(self):
        ds = gen_linear(50, 2.0, [3.0], DistributionSpec("laplace", 0.0, 1e-12), 0)
        np.testing.assert_allclose(ds.y, 2.0 + 3.0 * ds.X[:, 0], atol=1e-9)
        assert np.all(np.abs(ds.X) <= 1.0)

    def test_deterministic(self):
        a = gen_linear(100, 1.0, [1.0, -2.0], LAPLACE, 4)
        b = gen_linear(100, 1.0, [1.0, -2.0], LAPLACE, 4)
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)

    def test_least_squares_slope(self):
        ds = gen_linear(10_000, 2.0, [3.0], LAPLACE, 1)
        A = np.column_stack([np.ones(len(ds)), ds.X])
        coef, *_ = np.linalg.lstsq(A, ds.y, rcond=None)
        assert coef[1] == pytest.approx(3.0, abs=0.1)
        assert coef[0] == pytest.approx(2.0, abs=0.1)


class TestSales:
    def test_degenerate_is_constant(self):
        s = gen_sales_series(28, 7, base=12.0, amplitude=0.0, trend=0.0, noise_scale=1e-12, seed=1)
        np.testing.assert_allclose(s.values, 12.0, atol=1e-9)

    def test_one_hot_calendar(self):
        s = gen_sales_series(70, 7, seed=2)
        onehot = np.column_stack([s.exogenous[f"dow{k}"] for k in range(7)])
        assert onehot.shape[1] == 7
        np.testing.assert_array_equal(onehot.sum(axis=1), 1.0)
        assert "special" in s.exogenous

    def test_heteroscedastic_variance(self):
        s = gen_sales_series(2000, 7, base=20.0, amplitude=8.0, noise_scale=2.0, heteroscedastic=True, seed=3)
        phase = s.timestamps % 7
        resid = s.values - np.array([np.median(s.values[phase == k]) for k in range(7)])[phase]
        high = np.isin(phase, [1, 2])  # sin peaks near phases 1-2
        low = np.isin(phase, [5, 6])
        assert resid[high].var() > resid[low].var()

    def test_nonnegative_and_deterministic(self):
        a = gen_sales_series(200, 7, base=2.0, noise_scale=5.0, seed=8)
        b = gen_sales_series(200, 7, base=2.0, noise_scale=5.0, seed=8)
        assert np.all(a.values >= 0)
        np.testing.assert_array_equal(a.values, b.values)

    def test_validation(self):
        with pytest.raises(ValueError):
            gen_sales_series(10, 7)
        with pytest.raises(ValueError):
            gen_sales_series(30, 7, noise_scale=0.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        s = gen_sales_series(60, 7, seed=4)
        path = tmp_path / "s.csv"
        save_csv(s, path)
        back = load_csv(path)
        np.testing.assert_array_equal(back.timestamps, s.timestamps)
        np.testing.assert_allclose(back.values, s.values, rtol=0, atol=1e-12)
        assert back.exog_names == s.exog_names
        for k in s.exogenous:
            np.testing.assert_allclose(back.exogenous[k], s.exogenous[k], atol=1e-12)

    def test_non_numeric_cell_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,y\n0,1.5\n1,oops\n")
        with pytest.raises(MalformedRowError, match="line 3") as exc:
            load_csv(path)
        assert isinstance(exc.value, NonNumericCellError)
        assert exc.value.line == 3

    def test_wrong_field_count(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,y,x\n0,1.5,2\n1,2\n")
        with pytest.raises(MalformedRowError) as exc:
            load_csv(path)
        assert not isinstance(exc.value, NonNumericCellError)

    def test_empty(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(EmptyInputError):
            load_csv(path)
        path.write_text("t,y\n")
        with pytest.raises(EmptyInputError):
            load_csv(path)

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFileError):
            load_csv(tmp_path / "nope.csv")

    def test_non_increasing(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("t,y\n0,1\n2,1\n2,3\n")
        with pytest.raises(TimestampOrderError):
            load_csv(path)

    def test_error_types_are_distinct(self):
        kinds = {MissingFileError, EmptyInputError, MalformedRowError, NonNumericCellError, TimestampOrderError}
        assert len(kinds) == 5

    def test_dataset_round_trip(self, tmp_path):
        ds = gen_linear(30, 1.0, [2.0, -1.0], LAPLACE, 0)
        path = tmp_path / "d.csv"
        save_dataset_csv(ds, path)
        assert csv_kind(path) == "dataset"
        back = load_dataset_csv(path)
        np.testing.assert_array_equal(back.X, ds.X)
        np.testing.assert_array_equal(back.y, ds.y)


class TestNormalize:
    def test_moments(self):
        ds = gen_linear(500, 5.0, [4.0, -2.0, 0.5], LAPLACE, 2)
        norm, _ = normalize(ds)
        assert np.all(np.abs(norm.X.mean(axis=0)) < 1e-9)
        assert np.all(np.abs(norm.X.var(axis=0) - 1.0) < 1e-6)
        assert abs(norm.y.mean()) < 1e-9 and abs(norm.y.var() - 1.0) < 1e-6

    def test_constant_column(self):
        ds = Dataset(np.column_stack([np.full(20, 3.0), np.arange(20.0)]), np.arange(20.0))
        norm, stats = normalize(ds)
        np.testing.assert_array_equal(norm.X[:, 0], 0.0)
        assert stats.feature_std[0] == 1.0

    def test_target_round_trip(self):
        ds = gen_linear(100, -3.0, [1.0], LAPLACE, 5)
        norm, stats = normalize(ds)
        np.testing.assert_allclose(denormalize_prediction(norm.y, stats), ds.y, atol=1e-9)
        assert denormalize_prediction(float(norm.y[3]), stats) == pytest.approx(ds.y[3], abs=1e-9)
