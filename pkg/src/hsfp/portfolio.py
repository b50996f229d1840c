"""Flexible-probability moments and long-only mean-variance portfolios."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import nnls

from hsfp.errors import DataError, NumericalError
from hsfp.flexprob import check_probabilities

__all__ = [
    "FpMoments",
    "PortfolioWeights",
    "fp_moments",
    "solve_qp",
    "kkt_residual",
    "min_variance",
    "frontier_point",
    "efficient_frontier",
    "max_sharpe",
    "benchmark_ew",
    "benchmark_mvo",
    "frontier_frame",
]

PERIODS_PER_YEAR = 12


@dataclass
class FpMoments:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def n_assets(self) -> int:
        return self.mean.size


@dataclass
class PortfolioWeights:
    weights: np.ndarray
    label: str
    expected_return: float = float("nan")  # monthly
    volatility: float = float("nan")  # monthly
    sharpe: float = float("nan")  # annualised
    kkt_residual: float = 0.0
    flags: list[str] = field(default_factory=list)


def fp_moments(returns, p) -> FpMoments:
    """Probability-weighted mean and covariance of a ``T x N`` return window."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    p = check_probabilities(p)
    if r.shape[0] != p.size:
        raise DataError(f"return window has {r.shape[0]} dates, probabilities have {p.size}")
    mean = p @ r
    dev = r - mean
    cov = dev.T @ (dev * p[:, None])
    cov = 0.5 * (cov + cov.T)
    return FpMoments(mean, cov)


def annualised_sharpe(ret: float, vol: float, rf: float) -> float:
    if vol <= 0:
        return float("nan")
    return (PERIODS_PER_YEAR * ret - rf) / (math.sqrt(PERIODS_PER_YEAR) * vol)


# -- quadratic programming ---------------------------------------------------

def _eqp(Q, A, b):
    """Minimise ``x'Qx/2`` subject to ``Ax = b``; least-squares solve of the KKT system."""
    n, m = Q.shape[0], A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = Q
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = np.concatenate([np.zeros(n), b])
    try:
        sol = np.linalg.solve(K, rhs)
        if np.all(np.isfinite(sol)) and np.allclose(K @ sol, rhs, rtol=0.0, atol=1e-14):
            return sol[:n]
    except np.linalg.LinAlgError:
        pass
    # singular KKT system: rank-deficient covariance or duplicate constraint rows
    return np.linalg.lstsq(K, rhs, rcond=None)[0][:n]


def _bound_multipliers(Q, A, x, free):
    """Multipliers ``lam = Qx - A'nu`` from a least-squares fit on the free set."""
    g = Q @ x
    if free.any():
        nu = np.linalg.lstsq(A[:, free].T, g[free], rcond=None)[0]
    else:
        nu = np.zeros(A.shape[0])
    return g - A.T @ nu


def _nullspace_projector(A) -> np.ndarray:
    return np.eye(A.shape[1]) - np.linalg.pinv(A) @ A


def _certificate(Q, A, x, fixed, proj=None) -> float:
    """Smallest ``|Qx - A'nu - lam|`` over ``nu`` free and ``lam >= 0`` supported on ``fixed``.

    Zero means ``x`` satisfies stationarity and dual feasibility. Works at
    degenerate vertices where the multipliers are not unique: ``nu`` is
    eliminated by projecting onto the null space of ``A`` and the remaining
    nonnegative fit is a standard NNLS problem.
    """
    g = Q @ x
    if proj is None:
        proj = _nullspace_projector(A)
    pg = proj @ g
    if not fixed.any():
        return float(np.max(np.abs(pg)))
    E = proj[:, fixed]
    lam, _ = nnls(E, pg)
    return float(np.max(np.abs(pg - E @ lam)))


def kkt_residual(Q, A, b, x) -> float:
    """Scaled KKT violation for ``min x'Qx/2, Ax = b, x >= 0``."""
    scale = max(float(np.max(np.abs(Q))), 1e-300)
    stat = _certificate(Q, A, x, x <= 0) / scale
    primal = float(np.max(np.abs(A @ x - b)))
    bound = float(max(0.0, -x.min()))
    return max(stat, primal, bound)


def solve_qp(Q, A, b, x0, max_iter: int = 500) -> np.ndarray:
    """Primal active-set method for ``min x'Qx/2, Ax = b, x >= 0`` from a feasible ``x0``."""
    Q = np.asarray(Q, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    x = np.array(x0, dtype=float)
    x[x < 0] = 0.0
    fixed = x <= 0
    scale = max(float(np.max(np.abs(Q))), 1e-300)
    proj = _nullspace_projector(A)
    for _ in range(max_iter):
        free = ~fixed
        step = np.zeros_like(x)
        step[free] = _eqp(Q[np.ix_(free, free)], A[:, free], b) - x[free]
        if np.max(np.abs(step)) <= 1e-13:
            if _certificate(Q, A, x, fixed, proj) <= 1e-12 * scale:
                return x
            lam = _bound_multipliers(Q, A, x, free)
            j = int(np.argmin(np.where(fixed, lam, np.inf)))
            fixed[j] = False
            continue
        neg = free & (step < 0)
        alpha, block = 1.0, -1
        if neg.any():
            ratios = np.where(neg, -x / np.where(neg, step, -1.0), np.inf)
            block = int(np.argmin(ratios))
            if ratios[block] < 1.0:
                alpha = max(float(ratios[block]), 0.0)
            else:
                block = -1
        x = x + alpha * step
        if block >= 0:
            x[block] = 0.0
            fixed[block] = True
        x[x < 0] = 0.0
    raise NumericalError("active-set QP did not terminate")


def _flags_for(Q, x) -> list[str]:
    free = x > 1e-12
    if free.sum() > 1:
        ev = np.linalg.eigvalsh(Q[np.ix_(free, free)])
        if ev[0] <= 1e-10 * max(ev[-1], 1e-300):
            return ["degenerate: covariance singular on the active assets"]
    return []


def _make(m: FpMoments, x: np.ndarray, label: str, rf: float, Q, A, b, certify: bool = True) -> PortfolioWeights:
    x = np.maximum(x, 0.0)
    x = x / x.sum()
    ret = float(m.mean @ x)
    vol = math.sqrt(max(float(x @ m.cov @ x), 0.0))
    pw = PortfolioWeights(x, label, ret, vol, annualised_sharpe(ret, vol, rf), float("nan"))
    if certify:
        pw.kkt_residual = kkt_residual(Q, A, b, x)
        pw.flags = _flags_for(Q, x)
    return pw


def min_variance(m: FpMoments, rf: float = 0.0, label: str = "MinVar") -> PortfolioWeights:
    n = m.n_assets
    A, b = np.ones((1, n)), np.ones(1)
    x = solve_qp(m.cov, A, b, np.full(n, 1.0 / n))
    return _make(m, x, label, rf, m.cov, A, b)


def frontier_point(m: FpMoments, target: float, rf: float = 0.0, label: str = "frontier",
                   start: np.ndarray | None = None, certify: bool = True) -> PortfolioWeights:
    """Minimum-variance long-only portfolio with monthly expected return ``target``.

    ``start`` is any long-only fully invested portfolio used to warm-start the
    active set (typically a neighbouring frontier point).
    """
    mu = m.mean
    lo, hi = int(np.argmin(mu)), int(np.argmax(mu))
    span = mu[hi] - mu[lo]
    tol = 1e-12 * (1.0 + abs(mu[hi]) + abs(mu[lo]))
    if target < mu[lo] - tol or target > mu[hi] + tol:
        raise DataError(f"target return {target} outside attainable range [{mu[lo]}, {mu[hi]}]")
    A = np.vstack([np.ones(m.n_assets), mu])
    b = np.array([1.0, target])
    if span <= tol:
        x0 = np.full(m.n_assets, 1.0 / m.n_assets)
        A, b = A[:1], b[:1]
    else:
        # mix the start portfolio with the extreme-return asset on the far side of the target
        if start is None:
            x0 = np.zeros(m.n_assets)
            x0[lo] = 1.0
        else:
            x0 = np.asarray(start, dtype=float).copy()
        r0 = float(mu @ x0)
        corner = hi if target >= r0 else lo
        gap = mu[corner] - r0
        theta = 0.0 if abs(gap) <= tol else min(max((target - r0) / gap, 0.0), 1.0)
        x0 *= 1.0 - theta
        x0[corner] += theta
    x = solve_qp(m.cov, A, b, x0)
    return _make(m, x, label, rf, m.cov, A, b, certify)


def efficient_frontier(m: FpMoments, n_points: int = 100, rf: float = 0.0) -> list[PortfolioWeights]:
    """Upper branch of the long-only frontier on a grid of target returns."""
    if n_points < 2:
        raise DataError("frontier needs at least 2 points")
    mv = min_variance(m, rf)
    r_lo, r_hi = mv.expected_return, float(m.mean.max())
    if r_hi - r_lo <= 1e-14 * (1.0 + abs(r_hi)):
        mv.flags.append("single-point frontier")
        return [mv]
    points = []
    start = mv.weights
    for target in np.linspace(r_lo, r_hi, n_points):
        try:
            pt = frontier_point(m, float(target), rf, start=start)
        except DataError:
            continue
        points.append(pt)
        start = pt.weights
    return points


def _golden_max(f, a: float, b: float, tol: float):
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    tol = max(tol, 8 * np.finfo(float).eps * (abs(a) + abs(b)))
    for _ in range(200):
        if abs(b - a) <= tol:
            break
        if fc[0] >= fd[0]:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return fc if fc[0] >= fd[0] else fd


def max_sharpe(m: FpMoments, rf: float = 0.0725, n_points: int = 100, label: str = "HS-FP") -> PortfolioWeights:
    """Frontier portfolio with the highest annualised Sharpe ratio.

    Picked on the frontier grid, then refined by golden-section search on
    target return between the neighbours of the best grid point.
    """
    front = efficient_frontier(m, n_points, rf)
    usable = [i for i, pt in enumerate(front) if pt.volatility > 0]
    if not usable:
        raise NumericalError("every frontier portfolio has zero volatility; Sharpe ratio undefined")
    best = max(usable, key=lambda i: front[i].sharpe)
    if len(front) > 1:
        lo_t = front[max(best - 1, 0)].expected_return
        hi_t = front[min(best + 1, len(front) - 1)].expected_return

        seed = front[best].weights

        def score(t):
            pt = frontier_point(m, t, rf, start=seed, certify=False)
            s = pt.sharpe if pt.volatility > 0 else -math.inf
            return s, pt

        span = abs(hi_t - lo_t)
        s_ref, refined = _golden_max(score, lo_t, hi_t, max(span * 1e-12, 1e-18))
        if s_ref > front[best].sharpe:
            front[best] = frontier_point(m, refined.expected_return, rf, start=refined.weights)
    out = front[best]
    out.label = label
    return out


def benchmark_ew(n_assets: int) -> PortfolioWeights:
    if n_assets < 1:
        raise DataError("need at least one asset")
    return PortfolioWeights(np.full(n_assets, 1.0 / n_assets), "EW")


def benchmark_mvo(returns, rf: float = 0.0725, n_points: int = 100) -> PortfolioWeights:
    """Max-Sharpe portfolio under equal probabilities on every date of the window."""
    r = np.asarray(returns, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
    m = fp_moments(r, np.full(r.shape[0], 1.0 / r.shape[0]))
    return max_sharpe(m, rf, n_points, label="MVO")


def frontier_frame(points: list[PortfolioWeights], assets) -> pd.DataFrame:
    rows = []
    for pt in points:
        row = {"return": pt.expected_return, "volatility": pt.volatility, "sharpe": pt.sharpe}
        row.update(dict(zip(assets, pt.weights)))
        rows.append(row)
    return pd.DataFrame(rows)
