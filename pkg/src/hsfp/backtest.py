"""Walk-forward backtest with a growing window and periodic rebalancing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
import pandas as pd

from hsfp.ensemble import combine
from hsfp.entropy import EntropySolution, time_state_condition
from hsfp.errors import DataError, HsfpError, NumericalError
from hsfp.flexprob import exp_decay
from hsfp.ingest import log_returns, smooth_and_score
from hsfp.portfolio import (
    PERIODS_PER_YEAR,
    PortfolioWeights,
    benchmark_ew,
    benchmark_mvo,
    efficient_frontier,
    fp_moments,
    max_sharpe,
)

log = logging.getLogger(__name__)

__all__ = [
    "BacktestConfig",
    "BacktestResult",
    "turnover",
    "drift",
    "summary_stats",
    "state_scores",
    "run_backtest",
    "rolling_relative",
    "MODELS",
]

MODELS = ("HS-FP", "MVO", "EW")
CVAR_LEVEL = 0.05


@dataclass(frozen=True)
class BacktestConfig:
    initial_train: int = 60
    rebalance_every: int = 6
    tc_bps: float = 0.0
    leeway: float = 0.1
    prior_hl: float = 60.0
    fast_hl: float = 3.0
    slow_hl: float = 12.0
    combination: str = "DCC"
    rf: float = 0.0725
    model: str = "HS-FP"
    n_frontier: int = 100

    def __post_init__(self):
        if self.initial_train < 2 or self.rebalance_every < 1:
            raise DataError("initial_train must be >= 2 and rebalance_every >= 1")
        if min(self.prior_hl, self.fast_hl, self.slow_hl) <= 0:
            raise DataError("half-lives must be positive")
        if self.tc_bps < 0:
            raise DataError("transaction cost must be non-negative")
        if not 0 < self.leeway < 1:
            raise DataError("leeway must lie in (0, 1)")
        if self.model not in MODELS:
            raise DataError(f"unknown model {self.model!r}; expected one of {MODELS}")
        if self.combination.upper() not in ("EQ", "DCC"):
            raise DataError(f"unknown combination method {self.combination!r}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def with_(self, **kw) -> "BacktestConfig":
        return replace(self, **kw)


@dataclass
class BacktestResult:
    gross: pd.Series
    net: pd.Series
    weights: pd.DataFrame
    turnover: pd.Series
    stats: dict
    config: BacktestConfig
    warnings: list[str] = field(default_factory=list)
    # figure data from the final rebalance (probabilities, ensemble weights, frontier)
    diagnostics: dict = field(default_factory=dict)


def turnover(prev_drifted, new) -> float:
    """One-sided turnover ``sum |new - prev| / 2``."""
    prev = np.asarray(prev_drifted, dtype=float)
    new = np.asarray(new, dtype=float)
    return 0.5 * float(np.sum(np.abs(new - prev)))


def drift(weights, log_ret) -> tuple[np.ndarray, float]:
    """Buy-and-hold weights after one month and the portfolio log return for that month."""
    growth = np.asarray(weights) * np.exp(np.asarray(log_ret))
    total = float(growth.sum())
    return growth / total, math.log(total)


def summary_stats(returns, rf: float = 0.0725, turnover_total: float | None = None) -> dict:
    """Annualised performance and tail-risk statistics of monthly log returns."""
    r = np.asarray(returns, dtype=float)
    n = r.size
    if n < 2:
        raise DataError("need at least 2 monthly returns for summary statistics")
    mean = float(r.mean())
    ann_ret = PERIODS_PER_YEAR * mean
    ann_vol = math.sqrt(PERIODS_PER_YEAR) * float(r.std(ddof=1))
    wealth = np.exp(np.concatenate([[0.0], np.cumsum(r)]))
    peak = np.maximum.accumulate(wealth)
    cutoff = float(np.quantile(r, CVAR_LEVEL))
    stats = {
        "n_months": n,
        "ann_return": ann_ret,
        "ann_geometric_return": math.exp(ann_ret) - 1.0,
        "ann_volatility": ann_vol,
        "sharpe": (ann_ret - rf) / ann_vol if ann_vol > 0 else float("nan"),
        "max_drawdown": float(np.max(1.0 - wealth / peak)),
        "cvar": -float(r[r <= cutoff].mean()),
        "low_confidence": n < 12,
    }
    if turnover_total is not None:
        stats["avg_monthly_turnover"] = turnover_total / n
    return stats


def state_scores(signals: pd.DataFrame | None, cfg: BacktestConfig) -> pd.DataFrame:
    """Smoothed and standardised state variables for every signal column."""
    if signals is None or signals.empty:
        return pd.DataFrame()
    cols = {}
    for col in signals.columns:
        sv = smooth_and_score(signals[col].dropna(), cfg.fast_hl, cfg.slow_hl, name=col, leeway=cfg.leeway)
        cols[col] = sv.scores
    return pd.DataFrame(cols)


def _hsfp_probabilities(scores: np.ndarray, names, cfg: BacktestConfig, when, warns: list[str]):
    k = scores.shape[0]
    if scores.shape[1] == 0:
        return exp_decay(k, cfg.prior_hl), None, {}
    ps, kept, sols = [], [], {}
    for j, name in enumerate(names):
        z = scores[:, j]
        if np.isnan(z).any():
            msg = f"{when}: state variable {name!r} has missing scores in the window; dropped"
            log.warning(msg)
            warns.append(msg)
            continue
        try:
            sol: EntropySolution = time_state_condition(z, float(z[-1]), cfg.leeway, cfg.prior_hl)
        except (DataError, NumericalError) as exc:
            msg = f"{when}: conditioning on {name!r} failed ({exc}); dropped"
            log.warning(msg)
            warns.append(msg)
            continue
        ps.append(sol.posterior)
        kept.append(name)
        sols[name] = sol
    if not ps:
        raise NumericalError(f"{when}: conditioning failed for every state variable")
    p, ens = combine(ps, cfg.combination, names=kept)
    return p, ens, sols


def run_backtest(prices: pd.DataFrame, signals: pd.DataFrame | None, cfg: BacktestConfig,
                 keep_diagnostics: bool = False) -> BacktestResult:
    """Walk forward through ``prices`` with a growing estimation window.

    ``signals`` holds raw monthly state signals (already interpolated and
    lagged); they are smoothed and scored with the config's half-lives. The
    sample starts at the first month where every signal has a score, whatever
    the model, so benchmarks run on the same dates.
    """
    returns = log_returns(prices)
    scores = pd.DataFrame(index=returns.index)
    raw_scores = state_scores(signals, cfg)
    if not raw_scores.empty:
        # trimmed for every model so that benchmarks share the evaluation window
        first = max(raw_scores[c].first_valid_index() for c in raw_scores.columns)
        returns = returns.loc[returns.index >= first]
        scores = raw_scores.reindex(returns.index)
    T = len(returns)
    if T <= cfg.initial_train:
        raise DataError(f"{T} return months available, need more than initial_train={cfg.initial_train}")

    R = returns.to_numpy()
    Z = scores.to_numpy()
    names = list(scores.columns)
    warns: list[str] = []
    diagnostics: dict = {}
    gross = np.empty(T - cfg.initial_train)
    net = np.empty_like(gross)
    w_rows, w_dates, to_vals = [], [], []
    w = None
    for k in range(cfg.initial_train, T):
        out = k - cfg.initial_train
        cost = 0.0
        if out % cfg.rebalance_every == 0:
            when = returns.index[k - 1].date().isoformat()
            window = R[:k]
            try:
                target, diag = _allocate(window, Z[:k], names, cfg, when, warns, keep_diagnostics)
            except HsfpError as exc:
                raise type(exc)(f"rebalance {when}: {exc}") from exc
            tv = 0.0 if w is None else turnover(w, target.weights)
            cost = cfg.tc_bps / 1e4 * tv
            w = target.weights
            w_rows.append(w)
            w_dates.append(returns.index[k - 1])
            to_vals.append(tv)
            if keep_diagnostics:
                diag["date"] = when
                diag["dates"] = returns.index[:k]
                diagnostics = diag
        w, g = drift(w, R[k])
        gross[out] = g
        net[out] = g - cost

    oos = returns.index[cfg.initial_train:]
    gross_s = pd.Series(gross, index=oos, name="gross")
    net_s = pd.Series(net, index=oos, name="net")
    weights = pd.DataFrame(np.vstack(w_rows), index=pd.DatetimeIndex(w_dates, name="date"),
                           columns=returns.columns)
    to_s = pd.Series(to_vals, index=weights.index, name="turnover")
    stats = summary_stats(net, cfg.rf, float(np.sum(to_vals)))
    stats["gross"] = summary_stats(gross, cfg.rf)
    return BacktestResult(gross_s, net_s, weights, to_s, stats, cfg, warns, diagnostics)


def _allocate(window, scores, names, cfg: BacktestConfig, when, warns, keep) -> tuple[PortfolioWeights, dict]:
    diag: dict = {}
    if cfg.model == "EW":
        return benchmark_ew(window.shape[1]), diag
    if cfg.model == "MVO":
        return benchmark_mvo(window, cfg.rf, cfg.n_frontier), diag
    p, ens, sols = _hsfp_probabilities(scores, names, cfg, when, warns)
    m = fp_moments(window, p)
    pw = max_sharpe(m, cfg.rf, cfg.n_frontier)
    if keep:
        diag = {
            "probabilities": p,
            "posteriors": {k: s.posterior for k, s in sols.items()},
            "priors": {k: s.prior for k, s in sols.items()},
            "crisp": {k: s.crisp.p for k, s in sols.items() if s.crisp is not None},
            "entropy": {k: s.summary() for k, s in sols.items()},
            "ensemble": ens,
            "moments": m,
            "frontier": efficient_frontier(m, cfg.n_frontier, cfg.rf),
            "portfolio": pw,
        }
    return pw, diag


def rolling_relative(returns: dict[str, pd.Series], window: int = 12, base: str = "HS-FP") -> pd.DataFrame:
    """Rolling ``window``-month log returns per model and the base model's excess over each other model."""
    frame = pd.DataFrame(returns)
    roll = frame.rolling(window).sum().dropna()
    out = roll.add_suffix(f"_{window}m")
    for col in frame.columns:
        if col != base and base in frame.columns:
            out[f"{base}_minus_{col}"] = roll[base] - roll[col]
    out.index.name = "date"
    return out
