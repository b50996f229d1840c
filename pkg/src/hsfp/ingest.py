"""Loading and preparing price and state-signal series.

Panels are plain ``pandas`` objects indexed by month-end ``DatetimeIndex``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline

from hsfp.errors import DataError

__all__ = [
    "StateVariable",
    "read_panel",
    "to_month_end",
    "log_returns",
    "interpolate_quarterly",
    "lag_series",
    "ewma",
    "smooth_and_score",
    "prepare_signals",
]


@dataclass
class StateVariable:
    name: str
    scores: pd.Series
    target: float
    leeway: float = 0.1
    # dates where the slow EWMA std vanished and the score was set to 0
    zero_std_dates: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.leeway < 1.0:
            raise DataError(f"leeway must lie in (0, 1), got {self.leeway}")


def to_month_end(index) -> pd.DatetimeIndex:
    idx = pd.DatetimeIndex(pd.to_datetime(index))
    return (idx + pd.offsets.MonthEnd(0)).normalize()


def read_panel(path: str | Path) -> pd.DataFrame:
    """Read a ``date,<series>...`` CSV into a month-end indexed frame.

    Blank cells are kept as NaN (quarterly columns are sparse before interpolation).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise DataError(f"cannot parse {path}: {exc}") from exc
    if df.columns.empty or df.columns[0] != "date":
        raise DataError(f"{path}: first column must be 'date'")
    try:
        dates = to_month_end(df.pop("date"))
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: bad date value ({exc})") from exc
    df.index = dates
    df.index.name = "date"
    if not df.index.is_monotonic_increasing or df.index.has_duplicates:
        raise DataError(f"{path}: dates must be strictly increasing months")
    for col in df.columns:
        try:
            df[col] = pd.to_numeric(df[col])
        except (ValueError, TypeError) as exc:
            raise DataError(f"{path}: column {col!r} is not numeric") from exc
    return df.astype(float)


def log_returns(prices: pd.DataFrame) -> pd.DataFrame:
    """Monthly log returns ``ln(v_t / v_{t-1})`` labelled by the later date."""
    if isinstance(prices, pd.Series):
        prices = prices.to_frame()
    if len(prices) < 2:
        raise DataError("need at least 2 price rows to form a return")
    values = prices.to_numpy(dtype=float)
    bad = ~(values > 0)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise DataError(
            f"non-positive or missing price in column {prices.columns[col]!r} "
            f"at {prices.index[row]}: {values[row, col]}"
        )
    logv = np.log(values)
    return pd.DataFrame(np.diff(logv, axis=0), index=prices.index[1:], columns=prices.columns)


def _month_number(idx: pd.DatetimeIndex) -> np.ndarray:
    return (idx.year * 12 + idx.month - 1).to_numpy()


def interpolate_quarterly(series: pd.Series | pd.DataFrame) -> pd.DataFrame:
    """Fill quarterly observations out to a monthly grid.

    A natural cubic spline runs through the knots (months are equally spaced
    on an integer month axis). With fewer than 4 knots a linear interpolant is
    used instead. The method used per column is recorded in
    ``result.attrs["interpolation"]``.
    """
    frame = series.to_frame() if isinstance(series, pd.Series) else series
    out = {}
    methods = {}
    for col in frame.columns:
        knots = frame[col].dropna()
        if len(knots) < 2:
            raise DataError(f"column {col!r}: need at least 2 quarterly observations")
        idx = to_month_end(knots.index)
        x = _month_number(idx)
        y = knots.to_numpy(dtype=float)
        grid_idx = pd.date_range(idx[0], idx[-1], freq="ME")
        grid = _month_number(grid_idx)
        if len(knots) >= 4:
            vals = CubicSpline(x, y, bc_type="natural")(grid)
            methods[col] = "natural_cubic"
        else:
            vals = np.interp(grid, x, y)
            methods[col] = "linear"
        # reproduce knots bit-for-bit
        vals[np.searchsorted(grid, x)] = y
        out[col] = pd.Series(vals, index=grid_idx)
    result = pd.DataFrame(out)
    result.index.name = "date"
    result.attrs["interpolation"] = methods
    return result


def lag_series(series: pd.Series | pd.DataFrame, months: int):
    """Report at date t the raw value from date t - months; leading months are dropped."""
    if months < 0:
        raise DataError(f"lag must be non-negative, got {months}")
    if months >= len(series):
        raise DataError(f"lag of {months} months leaves an empty sample (length {len(series)})")
    if months == 0:
        return series.copy()
    return series.shift(months).iloc[months:]


def ewma(values: np.ndarray, half_life: float) -> np.ndarray:
    """Causal EWMA with weights over the whole available history, renormalised."""
    return pd.Series(values).ewm(halflife=half_life, adjust=True).mean().to_numpy()


def _ewm_std(values: np.ndarray, half_life: float) -> np.ndarray:
    # population convention, consistent with the renormalised weights
    var = pd.Series(values).ewm(halflife=half_life, adjust=True).var(bias=True).to_numpy()
    return np.sqrt(np.maximum(var, 0.0))


def smooth_and_score(
    signal: pd.Series,
    fast_hl: float,
    slow_hl: float,
    name: str | None = None,
    leeway: float = 0.1,
) -> StateVariable:
    """Smooth a raw signal with the fast half-life, then z-score it with slow-half-life EWMA moments."""
    if not fast_hl > 0:
        raise DataError(f"fast half-life must be positive, got {fast_hl}")
    if slow_hl < fast_hl:
        raise DataError(f"slow half-life {slow_hl} shorter than fast half-life {fast_hl}")
    signal = signal.dropna()
    if len(signal) <= slow_hl:
        raise DataError(
            f"signal {name or signal.name!r} has {len(signal)} points, need more than slow half-life {slow_hl}"
        )
    x = signal.to_numpy(dtype=float)
    smooth = ewma(x, fast_hl)
    mean = ewma(smooth, slow_hl)
    std = _ewm_std(smooth, slow_hl)
    dev = smooth - mean
    degenerate = std <= 1e-12 * (np.abs(mean) + 1.0)
    scores = np.where(degenerate, 0.0, dev / np.where(degenerate, 1.0, std))
    series = pd.Series(scores, index=signal.index, name=name or signal.name)
    return StateVariable(
        name=str(series.name),
        scores=series,
        target=float(scores[-1]),
        leeway=leeway,
        zero_std_dates=list(signal.index[degenerate]),
    )


def prepare_signals(raw: pd.DataFrame, meta: dict[str, dict] | None = None) -> pd.DataFrame:
    """Interpolate quarterly columns and apply per-column publication lags.

    ``meta`` maps column name to ``{"frequency": "monthly"|"quarterly", "lag": int}``.
    Quarterly data is interpolated before lagging. The result is monthly and may
    contain leading NaNs where a column starts later than others.
    """
    meta = meta or {}
    cols = {}
    for col in raw.columns:
        info = meta.get(col, {})
        freq = info.get("frequency", "monthly")
        s = raw[col].dropna()
        if freq == "quarterly":
            s = interpolate_quarterly(s)[col]
        elif freq != "monthly":
            raise DataError(f"column {col!r}: unknown frequency {freq!r}")
        else:
            full = pd.date_range(s.index[0], s.index[-1], freq="ME")
            if len(full) != len(s):
                raise DataError(f"column {col!r}: monthly series has gaps")
            s.index = full
        lag = int(info.get("lag", 0))
        if lag:
            # shift onto the calendar, so the value observed at t - lag shows up at t
            ext = pd.date_range(s.index[0], periods=len(s) + lag, freq="ME")
            s = lag_series(s.reindex(ext), lag)
        cols[col] = s
    out = pd.DataFrame(cols)
    out.index.name = "date"
    return out
