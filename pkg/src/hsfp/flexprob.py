"""Flexible probabilities over historical dates.

Every constructor returns a 1-D ``numpy`` array of nonnegative weights summing
to one, ordered oldest date first (index ``t_bar - 1`` is the most recent date).
"""
from __future__ import annotations

import math
import warnings
from pathlib import Path
from typing import NamedTuple

import numpy as np
import pandas as pd

from hsfp.errors import DataError

__all__ = [
    "CrispResult",
    "check_probabilities",
    "rolling_window",
    "exp_decay",
    "empirical_cdf",
    "smooth_quantile",
    "crisp",
    "kernel",
    "effective_scenarios",
    "write_probabilities",
]

SUM_TOL = 1e-12


def check_probabilities(p, name: str = "p") -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise DataError(f"{name} must be a non-empty 1-D vector")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise DataError(f"{name} has negative or non-finite entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise DataError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def _normalise(w: np.ndarray) -> np.ndarray:
    return w / w.sum()


def rolling_window(t_bar: int, window: int) -> np.ndarray:
    """Equal weight on the most recent ``window`` dates."""
    if window <= 0:
        raise DataError(f"rolling window must be positive, got {window}")
    if window > t_bar:
        warnings.warn(f"rolling window {window} exceeds sample length {t_bar}; clipped", stacklevel=2)
        window = t_bar
    p = np.zeros(t_bar)
    p[t_bar - window:] = 1.0 / window
    return p


def exp_decay(t_bar: int, half_life: float) -> np.ndarray:
    """Exponentially decaying weights, halving every ``half_life`` dates into the past."""
    if not half_life > 0:
        raise DataError(f"half-life must be positive, got {half_life}")
    age = np.arange(t_bar - 1, -1, -1, dtype=float)
    return _normalise(np.exp(-math.log(2.0) / half_life * age))


def empirical_cdf(z) -> tuple[np.ndarray, np.ndarray]:
    """Knots ``(values, F)`` of the piecewise-linear empirical CDF.

    ``F(z_(i)) = i / t_bar`` with tied values sharing the highest rank.
    """
    z = np.sort(np.asarray(z, dtype=float))
    values, counts = np.unique(z, return_counts=True)
    return values, np.cumsum(counts) / z.size


def smooth_quantile(q, z) -> np.ndarray | float:
    """Inverse of the piecewise-linear empirical CDF (flat outside the knots)."""
    values, cdf = empirical_cdf(z)
    return _quantile(q, cdf, values)


def _quantile(q, cdf, values):
    # levels like 0.6 - 0.2 miss the knot 0.4 by an ulp; snap them so knot values come back exactly
    q = np.asarray(q, dtype=float)
    idx = np.clip(np.searchsorted(cdf, q), 0, cdf.size - 1)
    near = np.abs(cdf[idx] - q) <= 1e-12
    idx_lo = np.clip(idx - 1, 0, cdf.size - 1)
    near_lo = np.abs(cdf[idx_lo] - q) <= 1e-12
    out = np.interp(q, cdf, values)
    out = np.where(near, values[idx], np.where(near_lo, values[idx_lo], out))
    return float(out) if out.ndim == 0 else out


class CrispResult(NamedTuple):
    p: np.ndarray
    lower: float
    upper: float


def crisp(z, target: float, alpha: float) -> CrispResult:
    """Equal weight on dates whose state value sits in a band holding mass ``alpha`` around ``target``."""
    z = np.asarray(z, dtype=float)
    if z.size == 0:
        raise DataError("state variable is empty")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"leeway alpha must lie in (0, 1), got {alpha}")
    values, cdf = empirical_cdf(z)
    half = alpha / 2.0
    f_star = float(np.interp(target, values, cdf))
    f_star = min(max(f_star, half), 1.0 - half)
    z_min = _quantile(half, cdf, values)
    z_max = _quantile(1.0 - half, cdf, values)
    if target <= z_min:
        lower = float(values[0])
        upper = _quantile(f_star + half, cdf, values)
    elif target >= z_max:
        lower = _quantile(f_star - half, cdf, values)
        upper = float(values[-1])
    else:
        lower = _quantile(f_star - half, cdf, values)
        upper = _quantile(f_star + half, cdf, values)
    inside = (z >= lower) & (z <= upper)
    if not inside.any():
        raise DataError(
            f"no historical date falls in the crisp band [{lower}, {upper}] for target {target} "
            f"and leeway {alpha}; widen alpha"
        )
    return CrispResult(_normalise(inside.astype(float)), lower, upper)


def kernel(z, target: float, bandwidth: float, gamma: int = 2) -> np.ndarray:
    """Exponential (``gamma=1``) or Gaussian (``gamma=2``) kernel weights around ``target``."""
    if not bandwidth > 0:
        raise DataError(f"bandwidth must be positive, got {bandwidth}")
    if gamma not in (1, 2):
        raise DataError(f"kernel exponent must be 1 or 2, got {gamma}")
    z = np.asarray(z, dtype=float)
    # shift by the smallest distance so far-off targets cannot underflow every weight
    d = np.abs(z - target) ** gamma / bandwidth
    return _normalise(np.exp(-(d - d.min())))


def effective_scenarios(p, gamma: float | None = None) -> float:
    """Effective number of scenarios.

    Exponential of the Shannon entropy by default, or the generalised
    ``(sum p**gamma) ** (-1 / (gamma - 1))`` when ``gamma`` is given. The result
    is clipped to its theoretical range ``[1, len(p)]`` to absorb rounding.
    """
    p = check_probabilities(p)
    nz = p[p > 0]
    if np.all(nz == nz[0]):
        # uniform on k dates: every entropy form gives exactly k
        return float(nz.size)
    if gamma is None:
        ens = math.exp(-float(np.sum(nz * np.log(nz))))
    else:
        if gamma <= 0 or gamma == 1:
            raise DataError(f"entropy exponent must be positive and != 1, got {gamma}")
        ens = float(np.sum(p ** gamma)) ** (-1.0 / (gamma - 1.0))
    return min(max(ens, 1.0), float(p.size))


def write_probabilities(path: str | Path, dates, columns: dict[str, np.ndarray]) -> None:
    """Write one or more probability vectors as ``date,<name>...`` CSV."""
    frame = pd.DataFrame({k: np.asarray(v, dtype=float) for k, v in columns.items()},
                         index=pd.DatetimeIndex(dates, name="date"))
    frame.to_csv(path, date_format="%Y-%m-%d", float_format="%.17g")
