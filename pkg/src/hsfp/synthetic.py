"""Deterministic synthetic market and macro-signal data for tests and demos.

A persistent latent regime drives both the asset drifts and the signals, so
conditioning on the signals carries real (if modest) information.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

__all__ = ["ASSETS", "SIGNAL_META", "make_market", "write_fixture", "FIXTURE_CONFIG"]

ASSETS = ("equity", "bonds", "cash", "property")
# monthly drift, regime loading, monthly vol
_DRIFT = np.array([0.012, 0.008, 0.006, 0.010])
_LOADING = np.array([0.012, -0.004, 0.0005, 0.008])
_VOL = np.array([0.050, 0.020, 0.003, 0.040])
_CORR = np.array([
    [1.0, 0.2, 0.0, 0.6],
    [0.2, 1.0, 0.1, 0.2],
    [0.0, 0.1, 1.0, 0.0],
    [0.6, 0.2, 0.0, 1.0],
])

SIGNAL_META = {
    "inflation": {"frequency": "monthly", "lag": 1},
    "growth": {"frequency": "quarterly", "lag": 3},
    "rates": {"frequency": "monthly", "lag": 0},
}

FIXTURE_CONFIG = """\
[data]
prices = prices.csv
signals = signals.csv

[signal.inflation]
frequency = monthly
lag = 1

[signal.growth]
frequency = quarterly
lag = 3

[signal.rates]
frequency = monthly
lag = 0

[backtest]
initial_train = 60
rebalance_every = 6
tc_bps = 0
leeway = 0.1
prior_hl = 60
fast_hl = 3
slow_hl = 12
combination = DCC
rf = 0.0725
n_frontier = 100

[robustness]
partitions = 16
sr_threshold = 0.0
confidence = 0.95

[run]
seed = 0
workers = 1
"""


def make_market(n_months: int = 144, seed: int = 7, lead: int = 24,
                start: str = "2006-01-31") -> tuple[pd.DataFrame, pd.DataFrame]:
    """Return ``(prices, raw_signals)``.

    ``prices`` has ``n_months + 1`` month-end rows; signals begin ``lead``
    months earlier so that lagged, scored signals cover the whole return
    sample. The quarterly ``growth`` column is blank outside quarter ends.
    """
    rng = np.random.default_rng(seed)
    total = n_months + 1 + lead
    dates = pd.date_range(start, periods=total, freq="ME") - pd.offsets.MonthEnd(lead)
    dates = pd.DatetimeIndex(dates, name="date")

    regime = np.zeros(total)
    for t in range(1, total):
        regime[t] = 0.92 * regime[t - 1] + 0.4 * rng.standard_normal()

    chol = np.linalg.cholesky(_CORR)
    shocks = rng.standard_normal((total, len(ASSETS))) @ chol.T
    rets = _DRIFT + np.outer(np.roll(regime, 1), _LOADING) + shocks * _VOL
    rets[0] = 0.0
    px = 100.0 * np.exp(np.cumsum(rets[lead:], axis=0) - rets[lead])
    prices = pd.DataFrame(px, index=dates[lead:], columns=list(ASSETS))

    signals = pd.DataFrame({
        "inflation": 5.0 + 1.5 * regime + 0.3 * rng.standard_normal(total),
        "growth": 2.0 - 0.8 * regime + 0.4 * rng.standard_normal(total),
        "rates": 7.0 + 0.9 * regime + 0.2 * np.cumsum(0.1 * rng.standard_normal(total)),
    }, index=dates)
    signals.loc[~dates.month.isin([3, 6, 9, 12]), "growth"] = np.nan
    return prices.round(6), signals.round(6)


def write_fixture(directory: str | Path, **kw) -> Path:
    """Write ``prices.csv``, ``signals.csv`` and ``config.ini`` into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    prices, signals = make_market(**kw)
    prices.to_csv(d / "prices.csv", date_format="%Y-%m-%d")
    signals.to_csv(d / "signals.csv", date_format="%Y-%m-%d")
    (d / "config.ini").write_text(FIXTURE_CONFIG)
    return d
