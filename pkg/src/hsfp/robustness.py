"""Backtest-overfitting statistics: PSR, MinTRL, PBO via CSCV and the deflated Sharpe ratio.

All Sharpe ratios here are per period (not annualised).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import ndtr, ndtri
from scipy.stats import kurtosis, skew
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from hsfp.errors import DataError, NumericalError
from hsfp.jsonio import write_json

__all__ = [
    "EULER_GAMMA",
    "SharpeMoments",
    "sharpe_moments",
    "psr",
    "psr_matrix",
    "min_trl",
    "cscv_masks",
    "OverfitReport",
    "pbo_cscv",
    "dsr_threshold",
    "DsrResult",
    "cluster_trials",
    "dsr",
    "write_report",
]

EULER_GAMMA = 0.5772156649015329
_COMBO_CHUNK = 2048


@dataclass(frozen=True)
class SharpeMoments:
    sr: float
    skew: float
    kurt: float
    n: int


def sharpe_moments(returns) -> SharpeMoments:
    """Per-period Sharpe ratio with population skewness and (non-excess) kurtosis."""
    r = np.asarray(returns, dtype=float)
    if r.size < 2:
        raise DataError("need at least 2 observations")
    sd = r.std(ddof=1)
    if sd == 0:
        raise DataError("constant return series: Sharpe ratio undefined")
    return SharpeMoments(float(r.mean() / sd), float(skew(r)), float(kurtosis(r, fisher=False)), r.size)


def _psr_denominator(sr, sk, ku):
    return 1.0 - sk * sr + (ku - 1.0) / 4.0 * sr * sr


def psr(sr_observed: float, sr_benchmark: float, n_obs: int, skewness: float = 0.0,
        kurt: float = 3.0) -> float:
    """Probability that the true Sharpe ratio exceeds ``sr_benchmark``."""
    if n_obs < 2:
        raise DataError(f"PSR needs at least 2 observations, got {n_obs}")
    if kurt < 1:
        raise DataError(f"kurtosis must be >= 1, got {kurt}")
    den = _psr_denominator(sr_observed, skewness, kurt)
    if not den > 0:
        raise NumericalError(
            f"PSR variance term is non-positive ({den}) for sr={sr_observed}, skew={skewness}, kurt={kurt}"
        )
    return float(ndtr((sr_observed - sr_benchmark) * math.sqrt(n_obs - 1) / math.sqrt(den)))


def psr_matrix(returns: pd.DataFrame) -> pd.DataFrame:
    """Entry (i, j) is the PSR of column i using column j's Sharpe ratio as the benchmark."""
    moms = {c: sharpe_moments(returns[c].dropna()) for c in returns.columns}
    out = pd.DataFrame(index=returns.columns, columns=returns.columns, dtype=float)
    for i, mi in moms.items():
        for j, mj in moms.items():
            out.loc[i, j] = psr(mi.sr, mj.sr, mi.n, mi.skew, mi.kurt)
    return out


def min_trl(sr_observed: float, sr_benchmark: float, skewness: float = 0.0, kurt: float = 3.0,
            confidence: float = 0.95) -> float:
    """Smallest sample length at which PSR reaches ``confidence`` (``inf`` if never)."""
    if not 0.5 < confidence < 1.0:
        raise DataError(f"confidence must lie in (0.5, 1), got {confidence}")
    if sr_observed <= sr_benchmark:
        return math.inf
    den = _psr_denominator(sr_observed, skewness, kurt)
    if not den > 0:
        raise NumericalError(f"PSR variance term is non-positive ({den})")
    z = float(ndtri(confidence))
    n = max(2, math.ceil(1.0 + den * (z / (sr_observed - sr_benchmark)) ** 2))
    # the closed form can land one step off when it is an integer up to rounding
    while psr(sr_observed, sr_benchmark, n, skewness, kurt) < confidence:
        n += 1
    while n > 2 and psr(sr_observed, sr_benchmark, n - 1, skewness, kurt) >= confidence:
        n -= 1
    return n


# ---------------------------------------------------------------------------
# CSCV / PBO


def cscv_masks(n_blocks: int) -> np.ndarray:
    """Boolean (C(S, S/2), S) matrix; row c marks the in-sample blocks of combination c."""
    if n_blocks < 4 or n_blocks % 2:
        raise DataError(f"partition count must be even and >= 4, got {n_blocks}")
    return _masks(n_blocks)


@lru_cache(maxsize=8)
def _masks(n_blocks: int) -> np.ndarray:
    idx = np.array(list(combinations(range(n_blocks), n_blocks // 2)))
    mask = np.zeros((len(idx), n_blocks), dtype=bool)
    np.put_along_axis(mask, idx, True, axis=1)
    mask.flags.writeable = False
    return mask


@dataclass
class OverfitReport:
    pbo: float
    logits: np.ndarray
    slope: float
    intercept: float
    prob_loss: float
    is_sr: np.ndarray
    oos_sr: np.ndarray
    dominance: pd.DataFrame
    first_order_dominance: bool
    second_order_dominance: bool
    n_combinations: int
    columns: list
    excluded: list = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "pbo": self.pbo,
            "slope": self.slope,
            "intercept": self.intercept,
            "prob_loss": self.prob_loss,
            "n_combinations": self.n_combinations,
            "n_trials": len(self.columns),
            "first_order_dominance": self.first_order_dominance,
            "second_order_dominance": self.second_order_dominance,
            "excluded": list(map(str, self.excluded)),
            "flags": self.flags,
        }


def _subset_sharpe(mask, block_sum, block_sq, block_len, col_mean):
    # block sums are of mean-centred data, so the variance is free of cancellation
    n = mask.sum(axis=1, keepdims=True) * block_len
    s = mask @ block_sum
    sq = mask @ block_sq
    m = s / n
    var = (sq - n * m * m) / (n - 1)
    sd = np.sqrt(np.maximum(var, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(sd > 0, (m + col_mean) / sd, 0.0)


def _avg_rank(values: np.ndarray, pick: np.ndarray) -> np.ndarray:
    """1-based average rank of ``values[c, pick[c]]`` within row c."""
    own = values[np.arange(len(pick)), pick][:, None]
    less = (values < own).sum(axis=1)
    equal = (values == own).sum(axis=1)
    return less + (equal + 1) / 2.0


def _step_integral(grid: np.ndarray, cdf: np.ndarray) -> np.ndarray:
    # integral of a right-continuous step CDF from grid[0] to each grid point
    return np.concatenate([[0.0], np.cumsum(cdf[:-1] * np.diff(grid))])


def pbo_cscv(trials, n_blocks: int = 16, sr_threshold: float = 0.0) -> OverfitReport:
    """Probability of backtest overfitting by combinatorially symmetric cross-validation."""
    frame = trials if isinstance(trials, pd.DataFrame) else pd.DataFrame(np.asarray(trials, dtype=float))
    if frame.isna().to_numpy().any():
        raise DataError("trial matrix has missing entries")
    flags: list[str] = []
    sd = frame.std(ddof=1).to_numpy()
    excluded = list(frame.columns[~(sd > 0)])
    if excluded:
        flags.append(f"excluded {len(excluded)} constant column(s)")
        frame = frame.loc[:, sd > 0]
    n_trials = frame.shape[1]
    if n_trials < 2:
        raise DataError(f"PBO needs at least 2 non-constant trials, got {n_trials}")
    masks = cscv_masks(n_blocks)
    t_all = frame.shape[0]
    block_len = t_all // n_blocks
    if block_len < 1:
        raise DataError(f"{t_all} rows cannot fill {n_blocks} blocks")
    if t_all % n_blocks:
        flags.append(f"dropped {t_all % n_blocks} trailing row(s) to fit {n_blocks} equal blocks")
    if block_len * n_blocks // 2 < 2:
        raise DataError("in-sample halves need at least 2 rows")
    m = frame.to_numpy(dtype=float)[: block_len * n_blocks]
    col_mean = m.mean(axis=0)
    blocks = (m - col_mean).reshape(n_blocks, block_len, n_trials)
    block_sum = blocks.sum(axis=1)
    block_sq = (blocks ** 2).sum(axis=1)

    logits, is_best, oos_best, oos_all = [], [], [], []
    for start in range(0, len(masks), _COMBO_CHUNK):
        mk = masks[start:start + _COMBO_CHUNK].astype(float)
        sr_is = _subset_sharpe(mk, block_sum, block_sq, block_len, col_mean)
        sr_oos = _subset_sharpe(1.0 - mk, block_sum, block_sq, block_len, col_mean)
        best = np.argmax(sr_is, axis=1)
        omega = _avg_rank(sr_oos, best) / (n_trials + 1)
        logits.append(np.log(omega / (1.0 - omega)))
        rows = np.arange(len(best))
        is_best.append(sr_is[rows, best])
        oos_best.append(sr_oos[rows, best])
        oos_all.append(sr_oos.ravel())
    logits = np.concatenate(logits)
    is_best = np.concatenate(is_best)
    oos_best = np.concatenate(oos_best)
    oos_all = np.concatenate(oos_all)

    design = np.column_stack([is_best, np.ones_like(is_best)])
    if np.ptp(is_best) > 0:
        (slope, intercept), *_ = np.linalg.lstsq(design, oos_best, rcond=None)
    else:
        slope, intercept = float("nan"), float(oos_best.mean())
        flags.append("in-sample Sharpe ratios of the selected trials are all equal; slope undefined")

    grid = np.unique(np.concatenate([oos_best, oos_all]))
    cdf_opt = np.searchsorted(np.sort(oos_best), grid, side="right") / oos_best.size
    cdf_all = np.searchsorted(np.sort(oos_all), grid, side="right") / oos_all.size
    sd2_opt = _step_integral(grid, cdf_opt)
    sd2_all = _step_integral(grid, cdf_all)
    dominance = pd.DataFrame({
        "sr": grid,
        "cdf_optimized": cdf_opt,
        "cdf_all": cdf_all,
        "sd2_optimized": sd2_opt,
        "sd2_all": sd2_all,
    })
    tol = 1e-12
    return OverfitReport(
        pbo=float(np.mean(logits <= 0.0)),
        logits=logits,
        slope=float(slope),
        intercept=float(intercept),
        prob_loss=float(np.mean(oos_best < sr_threshold)),
        is_sr=is_best,
        oos_sr=oos_best,
        dominance=dominance,
        first_order_dominance=bool(np.all(cdf_opt <= cdf_all + tol)),
        second_order_dominance=bool(np.all(sd2_opt <= sd2_all + tol)),
        n_combinations=len(masks),
        columns=list(frame.columns),
        excluded=excluded,
        flags=flags,
    )


# ---------------------------------------------------------------------------
# Deflated Sharpe ratio


def dsr_threshold(variance: float, n_trials: int) -> float:
    """Expected maximum Sharpe ratio among ``n_trials`` independent trials with zero true Sharpe."""
    if n_trials < 1:
        raise DataError("need at least one trial")
    if variance < 0:
        raise DataError(f"variance must be non-negative, got {variance}")
    if n_trials == 1 or variance == 0:
        return 0.0
    k = float(n_trials)
    return math.sqrt(variance) * (
        (1.0 - EULER_GAMMA) * float(ndtri(1.0 - 1.0 / k)) + EULER_GAMMA * float(ndtri(1.0 - 1.0 / (k * math.e)))
    )


@dataclass
class DsrResult:
    probability: float
    n_clusters: int
    sr_threshold: float
    variance: float
    labels: np.ndarray
    cluster_sr: np.ndarray
    silhouette: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "dsr": self.probability,
            "K": self.n_clusters,
            "sr_threshold": self.sr_threshold,
            "cluster_sr_variance": self.variance,
            "silhouette": {str(k): v for k, v in self.silhouette.items()},
            "flags": self.flags,
        }


def _correlation_distance(m: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.corrcoef(m, rowvar=False)
    rho = np.nan_to_num(np.atleast_2d(rho), nan=0.0)
    np.fill_diagonal(rho, 1.0)
    return np.sqrt(np.clip(2.0 * (1.0 - rho), 0.0, None))


def cluster_trials(m: np.ndarray, seed: int = 0, max_k: int = 25) -> tuple[np.ndarray, dict, list[str]]:
    """K-means on correlation-distance rows; K picked by the largest mean silhouette."""
    n = m.shape[1]
    flags: list[str] = []
    dist = _correlation_distance(m)
    if np.max(dist) < 1e-12:
        flags.append("degenerate: all trials perfectly correlated")
        return np.zeros(n, dtype=int), {}, flags
    ks = range(2, min(n - 1, max_k) + 1)
    if len(ks) == 0:
        flags.append(f"only {n} trials; each treated as its own cluster")
        return np.arange(n), {}, flags
    scores, fits = {}, {}
    for k in ks:
        labels = KMeans(n_clusters=k, n_init=10, random_state=seed).fit_predict(dist)
        if len(np.unique(labels)) < 2:
            continue
        scores[k] = float(silhouette_score(dist, labels))
        fits[k] = labels
    if not scores:
        flags.append("degenerate: no K produced two distinct clusters")
        return np.zeros(n, dtype=int), {}, flags
    best = max(scores, key=lambda k: (scores[k], -k))
    return _relabel(fits[best]), scores, flags


def _relabel(labels: np.ndarray) -> np.ndarray:
    # order clusters by first appearance so labels are stable across K-means internals
    _, first = np.unique(labels, return_index=True)
    order = labels[np.sort(first)]
    mapping = {old: new for new, old in enumerate(order)}
    return np.array([mapping[x] for x in labels])


def _cluster_sharpes(m: np.ndarray, labels: np.ndarray) -> np.ndarray:
    out = []
    for k in np.unique(labels):
        cols = m[:, labels == k]
        var = cols.var(axis=0, ddof=1)
        var = np.where(var > 0, var, np.nan)
        w = 1.0 / var
        if np.all(np.isnan(w)):
            w = np.ones(cols.shape[1])
        w = np.nan_to_num(w) / np.nansum(w)
        agg = cols @ w
        sd = agg.std(ddof=1)
        out.append(agg.mean() / sd if sd > 0 else 0.0)
    return np.array(out)


def dsr(trials, sr_observed: float, n_obs: int, skewness: float = 0.0, kurt: float = 3.0,
        seed: int = 0, max_k: int = 25) -> DsrResult:
    """Deflated Sharpe ratio with the trial count reduced by clustering."""
    m = np.asarray(trials.to_numpy() if isinstance(trials, pd.DataFrame) else trials, dtype=float)
    if m.ndim != 2 or m.shape[1] < 2:
        raise DataError("DSR needs a trial matrix with at least 2 columns")
    if np.isnan(m).any():
        raise DataError("trial matrix has missing entries")
    labels, scores, flags = cluster_trials(m, seed, max_k)
    k = int(labels.max()) + 1
    srs = _cluster_sharpes(m, labels)
    variance = float(np.var(srs, ddof=1)) if k > 1 else 0.0
    threshold = dsr_threshold(variance, k)
    prob = psr(sr_observed, threshold, n_obs, skewness, kurt)
    return DsrResult(prob, k, threshold, variance, labels, srs, scores, flags)


def write_report(out_dir: str | Path, report: OverfitReport, dsr_result: DsrResult | None = None,
                 extra: dict | None = None) -> None:
    """Write ``overfit.json``, ``logits.csv``, ``degradation.csv`` and ``dominance.csv``."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    payload = report.summary()
    if dsr_result is not None:
        payload.update(dsr_result.summary())
    payload.update(extra or {})
    write_json(d / "overfit.json", payload)
    fmt = "%.17g"
    pd.DataFrame({"logit": report.logits}).to_csv(d / "logits.csv", index_label="combination", float_format=fmt)
    pd.DataFrame({"is_sr": report.is_sr, "oos_sr": report.oos_sr}).to_csv(
        d / "degradation.csv", index_label="combination", float_format=fmt)
    report.dominance.to_csv(d / "dominance.csv", index=False, float_format=fmt)
