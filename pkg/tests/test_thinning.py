"""PACF estimation against the OLS lag-regression oracle, thinning selection, partitioning."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thingp.dataset import Dataset
from thingp.errors import ConfigError, DataError
from thingp.thinning import (max_thinning_for, pacf, partition, select_thinning,
                             select_thinning_number)


def ols_pacf(series: np.ndarray, h: int) -> float:
    """Oracle: the lag-h coefficient of an order-h autoregression fit by least squares."""
    n = series.shape[0]
    Y = series[h:]
    cols = [np.ones(n - h)] + [series[h - k : n - k] for k in range(1, h + 1)]
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return float(coef[-1])


def ar_series(coeffs, n, seed):
    rng = np.random.default_rng(seed)
    p = len(coeffs)
    x = np.zeros(n + p)
    eps = rng.standard_normal(n + p)
    for t in range(p, n + p):
        x[t] = np.dot(coeffs, x[t - p : t][::-1]) + eps[t]
    return x[p:]


def make_ds(x_cols, y, t=None):
    x = np.column_stack(x_cols)
    n = x.shape[0]
    return Dataset(x=x, y=np.asarray(y, dtype=float), t=np.arange(1.0, n + 1.0))


class TestPacf:
    def test_white_noise_inside_band(self):
        rng = np.random.default_rng(0)
        series = rng.standard_normal(10000)
        vals = pacf(series, 30)
        inside = np.abs(vals) < 2 / np.sqrt(10000)
        assert inside.mean() >= 0.95

    def test_ar1_matches_ols_oracle(self):
        series = ar_series([0.5], 50000, seed=1)
        vals = pacf(series, 5)
        assert vals[0] == pytest.approx(0.5, abs=0.02)
        assert abs(vals[1]) < 0.02
        for h in (1, 2, 3):
            assert vals[h - 1] == pytest.approx(ols_pacf(series, h), abs=5e-3)

    def test_alternating_series(self):
        series = np.tile([1.0, 2.0], 500)
        vals = pacf(series, 3)
        assert vals[0] == pytest.approx(-1.0, abs=0.01)

    def test_ar_p_matches_ols_oracle(self):
        for coeffs, seed in (([0.4, 0.2], 2), ([0.3, 0.1, 0.2], 3)):
            series = ar_series(coeffs, 20000, seed)
            vals = pacf(series, 8)
            for h in range(1, 9):
                assert vals[h - 1] == pytest.approx(ols_pacf(series, h), abs=5e-3)

    def test_constant_series_rejected(self):
        with pytest.raises(DataError):
            pacf(np.ones(500), 10)

    def test_short_series_rejected(self):
        with pytest.raises(DataError):
            pacf(np.arange(10.0), 10)

    def test_values_in_unit_interval(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            series = rng.standard_normal(300).cumsum()  # strongly dependent
            assert np.all(np.abs(pacf(series, 20)) <= 1.0 + 1e-9)


class TestSelectThinningNumber:
    def test_white_noise_selects_one(self):
        rng = np.random.default_rng(4)
        ds = make_ds([rng.standard_normal(10000)], rng.standard_normal(10000))
        assert select_thinning_number(ds) == 1

    def test_ar1_covariate_selects_small(self):
        series = ar_series([0.5], 50000, seed=5)
        rng = np.random.default_rng(6)
        ds = make_ds([series], rng.standard_normal(50000))
        T = select_thinning_number(ds)
        assert T in (2, 3)
        # confirm with the OLS oracle: lag-T PACF inside the band, lag-(T-1) outside
        thr = 2 / np.sqrt(50000)
        assert abs(ols_pacf(series, T)) <= thr + 5e-3
        assert abs(ols_pacf(series, T - 1)) > thr - 5e-3

    def test_include_y_can_only_raise_T(self):
        x = ar_series([0.3], 20000, seed=7)
        y = ar_series([0.8], 20000, seed=8)
        ds = make_ds([x], y)
        T_x = select_thinning_number(ds, include_y=False)
        T_xy = select_thinning_number(ds, include_y=True)
        assert T_xy >= T_x

    def test_saturation_warns_and_returns_h_max(self):
        # MA(1) with theta near 1 has geometrically decaying PACF that stays
        # outside the 2/sqrt(n) band for all small lags
        rng = np.random.default_rng(9)
        eps = rng.standard_normal(5001)
        series = eps[1:] + 0.95 * eps[:-1]
        ds = make_ds([series], rng.standard_normal(5000))
        with pytest.warns(UserWarning, match="saturat"):
            sel = select_thinning(ds, h_max=8)
        assert sel.T == 8
        assert sel.saturated

    def test_monotone_in_threshold(self):
        """Raising the pass threshold never increases the selected T."""
        series = ar_series([0.6, 0.2], 30000, seed=10)
        ds = make_ds([series], np.random.default_rng(2).standard_normal(30000))
        from thingp.thinning import pacf_table

        table = pacf_table(ds, include_y=True, h_max=50)
        abs_vals = np.abs(table.values)

        def T_at(threshold):
            hits = np.flatnonzero(np.all(abs_vals <= threshold, axis=0))
            return int(hits[0]) + 1 if hits.size else 50

        thresholds = np.linspace(table.threshold, 0.2, 20)
        Ts = [T_at(thr) for thr in thresholds]
        assert all(a >= b for a, b in zip(Ts, Ts[1:]))


class TestPartition:
    def test_round_robin_example(self):
        ds = make_ds([np.arange(10.0)], np.arange(10.0))
        part = partition(ds, 3)
        np.testing.assert_array_equal(part.blocks[0], [0, 3, 6, 9])
        np.testing.assert_array_equal(part.blocks[1], [1, 4, 7])
        np.testing.assert_array_equal(part.blocks[2], [2, 5, 8])

    def test_single_block(self):
        ds = make_ds([np.arange(7.0)], np.arange(7.0))
        part = partition(ds, 1)
        np.testing.assert_array_equal(part.blocks[0], np.arange(7))

    def test_singletons(self):
        ds = make_ds([np.arange(5.0)], np.arange(5.0))
        part = partition(ds, 5)
        assert all(b.shape == (1,) for b in part.blocks)

    def test_invalid_T(self):
        ds = make_ds([np.arange(5.0)], np.arange(5.0))
        with pytest.raises(ConfigError):
            partition(ds, 6)
        with pytest.raises(ConfigError):
            partition(ds, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=1, max_value=400), st.data())
    def test_cover_and_stride_properties(self, n, data):
        T = data.draw(st.integers(min_value=1, max_value=n))
        ds = make_ds([np.arange(float(n))], np.zeros(n))
        part = partition(ds, T)
        merged = np.sort(np.concatenate(part.blocks))
        np.testing.assert_array_equal(merged, np.arange(n))
        sizes = [b.shape[0] for b in part.blocks]
        assert max(sizes) - min(sizes) <= 1
        for b in part.blocks:
            if b.shape[0] > 1:
                assert np.all(np.diff(b) == T)


class TestMaxThinning:
    def test_scan_oracle_large(self):
        expected = max(T for T in range(1, 45001) if 45000 // T >= 31)
        assert expected == 1451
        assert max_thinning_for(45000, 30) == 1451

    def test_small_values(self):
        assert max_thinning_for(62, 30) == 2
        assert max_thinning_for(31, 30) == 1

    def test_no_valid_T(self):
        with pytest.raises(ConfigError):
            max_thinning_for(30, 30)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(min_value=2, max_value=100000), st.integers(min_value=1, max_value=200))
    def test_returned_T_is_maximal(self, n, m):
        if n <= m:
            return
        T = max_thinning_for(n, m)
        assert n // T >= m + 1
        assert n // (T + 1) < m + 1
