import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hsfp.errors import DataError
from hsfp.ingest import (
    interpolate_quarterly,
    lag_series,
    log_returns,
    prepare_signals,
    read_panel,
    smooth_and_score,
)


def monthly(values, start="2000-01-31"):
    return pd.Series(values, index=pd.date_range(start, periods=len(values), freq="ME"), dtype=float)


def panel(cols, start="2000-01-31"):
    n = len(next(iter(cols.values())))
    return pd.DataFrame(cols, index=pd.date_range(start, periods=n, freq="ME"), dtype=float)


# -- log returns ---------------------------------------------------------------

def test_log_returns_examples():
    r = log_returns(panel({"a": [100, 110], "b": [100, 50]}))
    assert r["a"].iloc[0] == pytest.approx(0.09531017980432493, abs=1e-15)
    assert r["b"].iloc[0] == pytest.approx(-math.log(2), abs=1e-15)
    flat = log_returns(panel({"a": [100, 100, 100]}))
    assert list(flat["a"]) == [0.0, 0.0]


def test_log_returns_dates_are_later_of_pair():
    p = panel({"a": [1.0, 2.0, 4.0]})
    r = log_returns(p)
    assert list(r.index) == list(p.index[1:])


def test_log_returns_rejects_non_positive_price_naming_column_and_date():
    p = panel({"a": [1.0, 2.0, 3.0], "b": [1.0, 0.0, 3.0]})
    with pytest.raises(DataError, match=r"'b'.*2000-02-29|2000-02-29.*'b'"):
        log_returns(p)


@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=60))
def test_log_returns_round_trip(prices):
    p = panel({"a": prices})
    r = log_returns(p)
    rebuilt = prices[0] * np.exp(np.cumsum(r["a"].to_numpy()))
    np.testing.assert_allclose(rebuilt, prices[1:], rtol=1e-9)


# -- quarterly interpolation ------------------------------------------------------

def quarterly(values, start="2000-03-31"):
    return pd.Series(values, index=pd.date_range(start, periods=len(values), freq="QE"), name="gdp", dtype=float)


def natural_spline_oracle(x, y, xs):
    """Natural cubic spline from the textbook tridiagonal system for second derivatives."""
    n = len(x)
    h = np.diff(x)
    A = np.zeros((n, n))
    rhs = np.zeros(n)
    A[0, 0] = A[-1, -1] = 1.0
    for i in range(1, n - 1):
        A[i, i - 1] = h[i - 1]
        A[i, i] = 2 * (h[i - 1] + h[i])
        A[i, i + 1] = h[i]
        rhs[i] = 6 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    M = np.linalg.solve(A, rhs)
    out = []
    for v in xs:
        i = min(np.searchsorted(x, v, side="right") - 1, n - 2)
        a, b = x[i], x[i + 1]
        hh = b - a
        out.append(M[i] * (b - v) ** 3 / (6 * hh) + M[i + 1] * (v - a) ** 3 / (6 * hh)
                   + (y[i] / hh - M[i] * hh / 6) * (b - v) + (y[i + 1] / hh - M[i + 1] * hh / 6) * (v - a))
    return np.array(out)


def test_interpolate_parabola_matches_tridiagonal_oracle():
    k = np.arange(5.0)
    q = quarterly((k - 2.0) ** 2 + 1.0)
    res = interpolate_quarterly(q)
    out = res["gdp"]
    assert len(out) == 13
    assert res.attrs["interpolation"]["gdp"] == "natural_cubic"
    months = np.arange(13.0)
    expected = natural_spline_oracle(3 * k, q.to_numpy(), months)
    np.testing.assert_allclose(out.to_numpy(), expected, atol=1e-9)


def test_interpolate_reproduces_knots_exactly_and_linear_ramp():
    q = quarterly([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
    out = interpolate_quarterly(q)["gdp"]
    assert (out.loc[q.index] == q).all()
    np.testing.assert_allclose(out.to_numpy(), 1.0 + np.arange(16) / 3.0, atol=1e-12)


def test_interpolate_few_knots_falls_back_to_linear():
    q = quarterly([1.0, 4.0, 2.0])
    res = interpolate_quarterly(q)
    assert res.attrs["interpolation"]["gdp"] == "linear"
    np.testing.assert_allclose(res["gdp"].to_numpy(), [1, 2, 3, 4, 10 / 3, 8 / 3, 2], atol=1e-12)


@given(st.lists(st.floats(-100, 100), min_size=4, max_size=20))
def test_interpolate_knots_exact_property(values):
    q = quarterly(values)
    out = interpolate_quarterly(q)["gdp"]
    assert (out.loc[q.index].to_numpy() == np.asarray(values)).all()


# -- lags -----------------------------------------------------------------------

def test_lag_examples():
    s = monthly([1.0, 2.0, 3.0])
    pd.testing.assert_series_equal(lag_series(s, 0), s)
    lagged = lag_series(s, 1)
    assert list(lagged.index) == list(s.index[1:])
    assert list(lagged) == [1.0, 2.0]
    with pytest.raises(DataError):
        lag_series(s, 3)


@given(st.integers(1, 6), st.integers(8, 30))
def test_lag_composition(n, length):
    s = monthly(np.arange(length, dtype=float))
    once = s
    for _ in range(n):
        once = lag_series(once, 1)
    pd.testing.assert_series_equal(once, lag_series(s, n))


def test_prepare_signals_alignment_on_fixture(data_dir):
    raw = read_panel(data_dir / "signals.csv")
    meta = {"inflation": {"frequency": "monthly", "lag": 1},
            "growth": {"frequency": "quarterly", "lag": 3},
            "rates": {"frequency": "monthly", "lag": 0}}
    sig = prepare_signals(raw, meta)
    infl = raw["inflation"].dropna()
    # value shown at t is the raw value from t - 1
    for i in (0, 10, 50):
        assert sig.loc[infl.index[i + 1], "inflation"] == infl.iloc[i]
    gdp = raw["growth"].dropna()
    for d in gdp.index[:5]:
        assert sig.loc[d + pd.offsets.MonthEnd(3), "growth"] == gdp.loc[d]
    rates = raw["rates"].dropna()
    assert (sig.loc[rates.index, "rates"] == rates).all()


def test_prepare_signals_rejects_monthly_gap():
    s = monthly(np.arange(6.0))
    raw = s.drop(s.index[2]).to_frame("x")
    with pytest.raises(DataError, match="gaps"):
        prepare_signals(raw, {"x": {"frequency": "monthly", "lag": 0}})


# -- smoothing and scoring ------------------------------------------------------

def ewma_oracle(x, hl):
    w = 0.5 ** (1.0 / hl)
    out = []
    for t in range(len(x)):
        weights = w ** np.arange(t, -1, -1)
        out.append(np.sum(weights * x[: t + 1]) / weights.sum())
    return np.array(out)


def ewm_std_oracle(x, hl):
    w = 0.5 ** (1.0 / hl)
    out = []
    for t in range(len(x)):
        weights = w ** np.arange(t, -1, -1)
        weights = weights / weights.sum()
        m = np.sum(weights * x[: t + 1])
        out.append(math.sqrt(max(np.sum(weights * (x[: t + 1] - m) ** 2), 0.0)))
    return np.array(out)


def test_smooth_and_score_matches_weighted_sum_oracle():
    rng = np.random.default_rng(3)
    cpi = 5 + np.cumsum(rng.normal(0, 0.2, 120))
    sv = smooth_and_score(monthly(cpi), 3, 12, name="cpi")
    smooth = ewma_oracle(cpi, 3)
    mean = ewma_oracle(smooth, 12)
    sd = ewm_std_oracle(smooth, 12)
    expected = np.zeros_like(cpi)
    ok = sd > 1e-12 * (np.abs(mean) + 1)
    expected[ok] = (smooth[ok] - mean[ok]) / sd[ok]
    np.testing.assert_allclose(sv.scores.to_numpy(), expected, atol=1e-10)
    assert sv.target == sv.scores.iloc[-1]


def test_constant_signal_scores_zero():
    sv = smooth_and_score(monthly(np.full(30, 4.2)), 3, 12)
    assert (sv.scores == 0).all()
    assert len(sv.zero_std_dates) == 30


def test_step_signal_decays_at_half_life_rate():
    x = np.r_[np.zeros(300), np.ones(10)]
    s = ewma_oracle(x, 3)
    from hsfp.ingest import ewma

    sm = ewma(x, 3)
    np.testing.assert_allclose(sm, s, atol=1e-12)
    gaps = 1.0 - sm[300:]
    np.testing.assert_allclose(gaps[1:] / gaps[:-1], 2 ** (-1 / 3), rtol=1e-10)


def test_smooth_and_score_preconditions():
    with pytest.raises(DataError):
        smooth_and_score(monthly(np.arange(12.0)), 3, 12)
    with pytest.raises(DataError):
        smooth_and_score(monthly(np.arange(40.0)), 12, 3)


@given(st.floats(-1e3, 1e3))
def test_scores_shift_invariant(c):
    rng = np.random.default_rng(11)
    x = rng.normal(0, 1, 60)
    a = smooth_and_score(monthly(x), 3, 12).scores.to_numpy()
    b = smooth_and_score(monthly(x + c), 3, 12).scores.to_numpy()
    np.testing.assert_allclose(a, b, atol=1e-9)


def test_read_panel_missing_file_names_path(tmp_path):
    with pytest.raises(DataError, match="nope.csv"):
        read_panel(tmp_path / "nope.csv")


def test_read_panel_month_end_index(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("date,a\n2001-01-15,1\n2001-02-03,2\n")
    df = read_panel(f)
    assert list(df.index) == list(pd.to_datetime(["2001-01-31", "2001-02-28"]))
