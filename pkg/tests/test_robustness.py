import math
from itertools import permutations

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from hsfp.errors import DataError, NumericalError
from hsfp.robustness import (
    EULER_GAMMA,
    cscv_masks,
    dsr,
    dsr_threshold,
    min_trl,
    pbo_cscv,
    psr,
    psr_matrix,
    sharpe_moments,
    write_report,
)


# -- PSR / MinTRL ---------------------------------------------------------------

def test_psr_self_comparison_is_half():
    for sr in (-0.3, 0.0, 0.09, 0.5):
        assert psr(sr, sr, 179, -0.4, 5.0) == 0.5


def test_psr_independent_oracle():
    expected = norm.cdf(0.2 * 10 / math.sqrt(1 + 0.5 * 0.04))
    assert psr(0.2, 0.0, 101, 0.0, 3.0) == pytest.approx(expected, abs=1e-12)


def test_psr_bad_denominator():
    with pytest.raises(NumericalError, match="skew"):
        psr(1.0, 0.0, 50, 5.0, 3.0)
    with pytest.raises(DataError):
        psr(0.1, 0.0, 1)


@given(st.floats(-0.5, 0.5), st.floats(0.001, 0.3), st.integers(2, 500), st.integers(1, 300),
       st.floats(-1, 1), st.floats(1.5, 8))
def test_psr_monotone(sr, dsr_, n, dn, sk, ku):
    try:
        base = psr(sr, 0.0, n, sk, ku)
        up_sr = psr(sr + dsr_, 0.0, n, sk, ku)
    except NumericalError:
        return
    if sr > 0:
        assert psr(sr, 0.0, n + dn, sk, ku) >= base
    # the denominator also moves with sr, so compare on the shared threshold shift instead
    assert psr(sr, -dsr_, n, sk, ku) >= base
    assert 0 <= up_sr <= 1


def test_min_trl_round_trip_random_draws():
    rng = np.random.default_rng(0)
    for _ in range(100):
        sr_b = rng.uniform(-0.1, 0.2)
        sr = sr_b + rng.uniform(0.02, 0.5)
        sk, ku, conf = rng.uniform(-1, 1), rng.uniform(2, 8), rng.uniform(0.8, 0.99)
        try:
            n = min_trl(sr, sr_b, sk, ku, conf)
        except NumericalError:
            continue
        assert psr(sr, sr_b, n, sk, ku) >= conf
        if n > 2:
            assert psr(sr, sr_b, n - 1, sk, ku) < conf


def test_min_trl_scaling_and_infinite():
    a = min_trl(0.1, 0.0, 0.0, 3.0, 0.95)
    b = min_trl(0.2, 0.1, 0.0, 3.0, 0.95)
    z = norm.ppf(0.95)
    assert a == math.ceil(1 + (1 + 0.5 * 0.01) * (z / 0.1) ** 2)
    assert b == math.ceil(1 + (1 + 0.5 * 0.04) * (z / 0.1) ** 2)
    c = min_trl(0.2, 0.0, 0.0, 3.0, 0.95)
    # doubling the edge divides the (T - 1) requirement by four, up to the denominator change
    assert (c - 1) == pytest.approx((b - 1) / 4, abs=1)
    assert min_trl(0.1, 0.1) == math.inf
    # far beyond a 179-month sample, as in small-edge settings
    assert min_trl(0.09, 0.05, -0.5, 6.0, 0.95) > 179


def test_sharpe_moments():
    r = np.random.default_rng(1).normal(0.01, 0.05, 500)
    m = sharpe_moments(r)
    assert m.sr == pytest.approx(r.mean() / r.std(ddof=1))
    assert m.kurt == pytest.approx(3.0, abs=0.5)
    with pytest.raises(DataError):
        sharpe_moments(np.ones(10))


def test_psr_matrix_diagonal():
    df = pd.DataFrame(np.random.default_rng(2).normal(0.01, 0.04, (120, 3)), columns=list("abc"))
    mat = psr_matrix(df)
    np.testing.assert_array_equal(np.diag(mat.to_numpy()), 0.5)
    assert mat.loc["a", "b"] + mat.loc["b", "a"] != 0


# -- CSCV ------------------------------------------------------------------------

def test_masks_count_and_symmetry():
    m = cscv_masks(16)
    assert m.shape == (12870, 16)
    assert np.all(m.sum(axis=1) == 8)
    assert np.all(m.sum(axis=0) == math.comb(15, 7))
    assert np.all((~m).sum(axis=0) == math.comb(15, 7))
    with pytest.raises(DataError):
        cscv_masks(5)


def subset_sharpe_oracle(x):
    return x.mean(axis=0) / x.std(axis=0, ddof=1)


def test_pbo_matches_straight_line_implementation():
    rng = np.random.default_rng(3)
    T, N, S = 60, 5, 6
    M = rng.normal(0, 1, (T, N))
    rep = pbo_cscv(M, S)
    blocks = np.split(M, S)
    logits = []
    for mask in cscv_masks(S):
        is_ = np.vstack([b for b, m in zip(blocks, mask) if m])
        oos = np.vstack([b for b, m in zip(blocks, mask) if not m])
        best = int(np.argmax(subset_sharpe_oracle(is_)))
        o = subset_sharpe_oracle(oos)
        rank = pd.Series(o).rank(method="average")[best]
        w = rank / (N + 1)
        logits.append(math.log(w / (1 - w)))
    np.testing.assert_allclose(rep.logits, logits, atol=1e-12)
    assert rep.pbo == pytest.approx(np.mean(np.array(logits) <= 0), abs=1e-12)
    assert rep.n_combinations == 20


def test_logit_boundary():
    # rank (N + 1) / 2 gives omega 0.5 and a zero logit, counted as overfit
    w = 3 / 6
    assert math.log(w / (1 - w)) == 0.0


@given(st.integers(0, 10_000))
def test_pbo_column_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(0, 1, (48, 6))
    order = rng.permutation(6)
    a = pbo_cscv(M, 6)
    b = pbo_cscv(M[:, order], 6)
    assert a.pbo == b.pbo
    assert 0 <= a.pbo <= 1
    np.testing.assert_allclose(np.sort(a.logits), np.sort(b.logits), atol=1e-12)


def test_pbo_flags_and_errors():
    rng = np.random.default_rng(4)
    M = rng.normal(size=(67, 4))
    M[:, 2] = 0.01
    rep = pbo_cscv(M, 8)
    assert rep.excluded == [2]
    assert any("trailing" in f for f in rep.flags)
    with pytest.raises(DataError):
        pbo_cscv(M[:, :1], 8)
    bad = M.copy()
    bad[3, 0] = np.nan
    with pytest.raises(DataError):
        pbo_cscv(bad, 8)


def test_report_round_trip(tmp_path):
    import json

    rng = np.random.default_rng(5)
    M = rng.normal(size=(64, 8))
    rep = pbo_cscv(M, 8)
    d = dsr(M, 0.1, 64)
    write_report(tmp_path, rep, d, {"note": "x"})
    data = json.loads((tmp_path / "overfit.json").read_text())
    assert data["pbo"] == rep.pbo and data["K"] == d.n_clusters
    logits = pd.read_csv(tmp_path / "logits.csv", float_precision="round_trip")["logit"].to_numpy()
    np.testing.assert_array_equal(logits, rep.logits)
    deg = pd.read_csv(tmp_path / "degradation.csv")
    assert len(deg) == rep.n_combinations
    dom = pd.read_csv(tmp_path / "dominance.csv")
    assert {"sr", "cdf_optimized", "cdf_all", "sd2_optimized", "sd2_all"} <= set(dom.columns)


# -- DSR -------------------------------------------------------------------------

def threshold_oracle(v, k):
    g = 0.5772156649015329
    return math.sqrt(v) * ((1 - g) * norm.ppf(1 - 1 / k) + g * norm.ppf(1 - 1 / (k * math.e)))


@pytest.mark.parametrize("v,k", [(0.01, 2), (0.0004, 9), (0.3, 25), (1e-6, 1000)])
def test_threshold_formula(v, k):
    assert dsr_threshold(v, k) == pytest.approx(threshold_oracle(v, k), abs=1e-10)
    assert EULER_GAMMA == pytest.approx(0.5772156649015329, abs=1e-16)


def test_threshold_non_decreasing_in_k():
    vals = [dsr_threshold(0.02, k) for k in range(1, 200)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_identical_trials_are_degenerate():
    col = np.random.default_rng(6).normal(0.01, 0.05, 100)
    M = np.column_stack([col] * 5)
    res = dsr(M, 0.2, 100, 0.0, 3.0)
    assert res.n_clusters == 1 and res.sr_threshold == 0.0 and res.variance == 0.0
    assert res.probability == psr(0.2, 0.0, 100, 0.0, 3.0)
    assert res.flags


def test_dsr_sign_consistency():
    rng = np.random.default_rng(7)
    f = rng.normal(size=(180, 3))
    M = np.repeat(f, 4, axis=1) + 0.3 * rng.normal(size=(180, 12))
    res = dsr(M * 0.02, 0.0, 179)
    for sr in (res.sr_threshold - 0.02, res.sr_threshold + 0.02):
        p = psr(sr, res.sr_threshold, 179)
        assert (p < 0.5) == (sr < res.sr_threshold)


def test_two_trials_each_own_cluster():
    M = np.random.default_rng(8).normal(size=(50, 2))
    res = dsr(M, 0.1, 50)
    assert res.n_clusters == 2
    with pytest.raises(DataError):
        dsr(M[:, :1], 0.1, 50)


def test_block_permutation_small_exhaustive():
    rng = np.random.default_rng(9)
    S, L, N = 6, 5, 4
    M = rng.normal(size=(S * L, N))
    base = np.sort(pbo_cscv(M, S).logits)
    blocks = np.split(M, S)
    for perm in list(permutations(range(S)))[::37]:
        shuffled = np.vstack([blocks[i] for i in perm])
        np.testing.assert_allclose(np.sort(pbo_cscv(shuffled, S).logits), base, atol=1e-12)
