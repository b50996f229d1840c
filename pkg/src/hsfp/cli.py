"""Command-line entry point: ``hsfp backtest | sweep | audit``.

Runs are driven by an INI file; see ``hsfp.synthetic.FIXTURE_CONFIG`` for a
complete example. Relative paths in the file resolve against its directory.
"""
from __future__ import annotations

import argparse
import configparser
import itertools
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import pandas as pd

from hsfp import __version__
from hsfp.backtest import BacktestConfig, BacktestResult, rolling_relative, run_backtest
from hsfp.errors import ConfigError, DataError, HsfpError, NumericalError
from hsfp.flexprob import write_probabilities
from hsfp.ingest import prepare_signals, read_panel
from hsfp.jsonio import write_json
from hsfp.portfolio import frontier_frame
from hsfp.robustness import dsr, min_trl, pbo_cscv, psr, psr_matrix, sharpe_moments, write_report

log = logging.getLogger("hsfp")

EXIT_CODES = {ConfigError: 1, DataError: 2, NumericalError: 3}
MESH_KEYS = ("leeway", "rebalance_every", "prior_hl", "fast_hl", "slow_hl")
FULL_MESH = {
    "leeway": [0.1, 0.2, 0.3],
    "rebalance_every": list(range(1, 13)),
    "prior_hl": [60, 72, 84, 96],
    "fast_hl": [3, 6, 9, 12],
    "slow_hl": [12, 18, 24, 36],
}
DEFAULT_MAX_CONFIGS = 500
FLOAT_FMT = "%.17g"
MODEL_DIRS = {"HS-FP": "hsfp", "MVO": "mvo", "EW": "ew"}


@dataclass
class RunConfig:
    prices: Path | None = None
    signals: Path | None = None
    signal_meta: dict = field(default_factory=dict)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    partitions: int = 16
    sr_threshold: float = 0.0
    confidence: float = 0.95
    seed: int = 0
    workers: int = 1
    mesh: dict = field(default_factory=lambda: dict(FULL_MESH))
    max_configs: int = DEFAULT_MAX_CONFIGS
    trials: Path | None = None
    benchmarks: list[str] = field(default_factory=list)

    def describe(self) -> dict:
        return {
            "prices": str(self.prices) if self.prices else None,
            "signals": str(self.signals) if self.signals else None,
            "signal_meta": self.signal_meta,
            "backtest": self.backtest.to_dict(),
            "partitions": self.partitions,
            "sr_threshold": self.sr_threshold,
            "confidence": self.confidence,
            "seed": self.seed,
            "version": __version__,
        }


# ---------------------------------------------------------------------------
# config parsing


def _parse_values(text: str, cast) -> list:
    """``"1, 2, 3"`` or ``"1..12"`` (inclusive integer range) into a list."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(cast(v) for v in range(int(lo), int(hi) + 1))
        else:
            out.append(cast(part))
    return out


def _backtest_config(section, overrides: dict) -> BacktestConfig:
    kw = {}
    for f in fields(BacktestConfig):
        if f.name in ("model",) or f.name not in section:
            continue
        raw = section[f.name]
        try:
            kw[f.name] = raw if f.type in ("str", str) else (int(raw) if f.type in ("int", int) else float(raw))
        except ValueError as exc:
            raise ConfigError(f"[backtest] {f.name} = {raw!r}: {exc}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return BacktestConfig(**kw)
    except DataError as exc:
        raise ConfigError(f"[backtest] {exc}") from exc


def load_run_config(path: str | Path | None, **overrides) -> RunConfig:
    """Parse the INI file at ``path`` and apply command-line ``overrides``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        base = path.parent

    def resolve(p):
        return None if p is None else (base / p if not Path(p).is_absolute() else Path(p))

    data = parser["data"] if parser.has_section("data") else {}
    meta = {}
    for sec in parser.sections():
        if sec.startswith("signal."):
            s = parser[sec]
            try:
                meta[sec[len("signal."):]] = {"frequency": s.get("frequency", "monthly"), "lag": s.getint("lag", 0)}
            except ValueError as exc:
                raise ConfigError(f"[{sec}] {exc}") from exc

    bt_over = {"tc_bps": overrides.get("tc_bps"), "initial_train": overrides.get("train_months")}
    bt = _backtest_config(parser["backtest"] if parser.has_section("backtest") else {}, bt_over)

    try:
        rob = parser["robustness"] if parser.has_section("robustness") else {}
        run = parser["run"] if parser.has_section("run") else {}
        cfg = RunConfig(
            prices=resolve(data.get("prices")),
            signals=resolve(data.get("signals")),
            signal_meta=meta,
            backtest=bt,
            partitions=int(rob.get("partitions", 16)),
            sr_threshold=float(rob.get("sr_threshold", 0.0)),
            confidence=float(rob.get("confidence", 0.95)),
            seed=int(run.get("seed", 0)),
            workers=int(run.get("workers", 1)),
            trials=resolve(parser.get("audit", "trials", fallback=None)),
            benchmarks=[c.strip() for c in parser.get("audit", "benchmarks", fallback="").split(",") if c.strip()],
        )
        if parser.has_section("sweep"):
            sw = parser["sweep"]
            mesh = dict(FULL_MESH) if sw.get("mesh", "").strip() == "full" else {}
            for key in MESH_KEYS:
                if key in sw:
                    mesh[key] = _parse_values(sw[key], int if key == "rebalance_every" else float)
            cfg.mesh = mesh
            cfg.max_configs = int(sw.get("max_configs", DEFAULT_MAX_CONFIGS))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    for key in ("seed", "workers", "max_configs"):
        if overrides.get(key) is not None:
            setattr(cfg, key, overrides[key])
    if overrides.get("trials") is not None:
        cfg.trials = Path(overrides["trials"])
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


# ---------------------------------------------------------------------------
# shared I/O


def _write_csv(frame: pd.DataFrame, path: Path, **kw) -> None:
    frame.to_csv(path, float_format=FLOAT_FMT, date_format="%Y-%m-%d", **kw)


def load_inputs(cfg: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame | None]:
    if cfg.prices is None:
        raise ConfigError("no price file configured ([data] prices)")
    prices = read_panel(cfg.prices)
    if prices.isna().to_numpy().any():
        bad = prices.columns[prices.isna().any()].tolist()
        raise DataError(f"{cfg.prices}: missing prices in column(s) {bad}")
    signals = None
    if cfg.signals is not None:
        raw = read_panel(cfg.signals)
        unknown = set(cfg.signal_meta) - set(raw.columns)
        if unknown:
            raise ConfigError(f"signal metadata for columns not in {cfg.signals}: {sorted(unknown)}")
        signals = prepare_signals(raw, cfg.signal_meta)
    return prices, signals


# ---------------------------------------------------------------------------
# backtest


def _write_model(out: Path, res: BacktestResult) -> None:
    d = out / MODEL_DIRS[res.config.model]
    d.mkdir(parents=True, exist_ok=True)
    _write_csv(pd.DataFrame({"gross": res.gross, "net": res.net}).rename_axis("date"), d / "returns.csv")
    _write_csv(res.weights, d / "weights.csv")
    _write_csv(res.turnover.to_frame(), d / "turnover.csv")


def _write_diagnostics(out: Path, res: BacktestResult, assets) -> None:
    diag = res.diagnostics
    if not diag:
        return
    d = out / MODEL_DIRS[res.config.model]
    cols = {}
    for name, p in diag["priors"].items():
        cols[f"{name}_prior"] = p
    for name, p in diag["crisp"].items():
        cols[f"{name}_crisp"] = p
    for name, p in diag["posteriors"].items():
        cols[f"{name}_posterior"] = p
    cols["combined"] = diag["probabilities"]
    write_probabilities(d / "probabilities.csv", diag["dates"], cols)
    write_json(d / "entropy.json", {"date": diag["date"], "variables": diag["entropy"]})
    if diag["ensemble"] is not None:
        write_json(d / "ensemble.json", diag["ensemble"].to_dict())
    _write_csv(frontier_frame(diag["frontier"], assets), d / "frontier.csv", index=False)


def cmd_backtest(cfg: RunConfig, out: Path) -> int:
    prices, signals = load_inputs(cfg)
    out.mkdir(parents=True, exist_ok=True)
    results = {}
    for model in ("HS-FP", "MVO", "EW"):
        res = run_backtest(prices, signals, cfg.backtest.with_(model=model), keep_diagnostics=model == "HS-FP")
        results[model] = res
        _write_model(out, res)
        for w in res.warnings:
            print(f"warning: {w}", file=sys.stderr)
    hs = results["HS-FP"]
    _write_diagnostics(out, hs, list(prices.columns))

    # the main result files hold HS-FP; per-model copies live in subdirectories
    _write_csv(pd.DataFrame({"gross": hs.gross, "net": hs.net}).rename_axis("date"), out / "returns.csv")
    _write_csv(hs.weights, out / "weights.csv")
    write_json(out / "stats.json", {m: r.stats for m, r in results.items()})
    rel = rolling_relative({m: r.net for m, r in results.items()}, 12, base="HS-FP")
    _write_csv(rel, out / "relative.csv")
    write_json(out / "run.json", cfg.describe())
    for m, r in results.items():
        print(f"{m:6s} ann_return={r.stats['ann_return']:.4f} vol={r.stats['ann_volatility']:.4f} "
              f"sharpe={r.stats['sharpe']:.3f} max_dd={r.stats['max_drawdown']:.3f}")
    return 0


# ---------------------------------------------------------------------------
# sweep


def build_mesh(mesh: dict) -> list[dict]:
    """Cartesian product of the listed parameter values, in a fixed key order."""
    missing = [k for k in mesh if k not in MESH_KEYS]
    if missing:
        raise ConfigError(f"unknown mesh parameter(s): {missing}")
    keys = [k for k in MESH_KEYS if k in mesh]
    if any(len(mesh[k]) == 0 for k in keys):
        raise ConfigError("every mesh parameter needs at least one value")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(mesh[k] for k in keys))]


def _sweep_one(args):
    prices, signals, cfg = args
    return run_backtest(prices, signals, cfg).net


def cmd_sweep(cfg: RunConfig, out: Path, dry_run: bool = False) -> int:
    points = build_mesh(cfg.mesh)
    names = [f"cfg{i:04d}" for i in range(len(points))]
    print(f"mesh declares {len(points)} configurations")
    out.mkdir(parents=True, exist_ok=True)
    params = {n: p for n, p in zip(names, points)}
    write_json(out / "trials_params.json", {"seed": cfg.seed, "base": cfg.backtest.to_dict(), "trials": params})
    if dry_run:
        return 0
    if len(points) > cfg.max_configs:
        raise ConfigError(
            f"mesh has {len(points)} configurations, above the cap of {cfg.max_configs}; "
            f"raise it with --max-configs {len(points)} or [sweep] max_configs"
        )
    prices, signals = load_inputs(cfg)
    try:
        configs = [cfg.backtest.with_(model="HS-FP", **p) for p in points]
    except DataError as exc:
        raise ConfigError(f"invalid mesh point: {exc}") from exc
    jobs = [(prices, signals, c) for c in configs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            series = list(pool.map(_sweep_one, jobs))
    else:
        series = [_sweep_one(j) for j in jobs]
    trials = pd.concat(series, axis=1, keys=names)
    trials.index.name = "date"
    _write_csv(trials, out / "trials.csv")
    return 0


# ---------------------------------------------------------------------------
# audit


def _read_trials(path: Path) -> pd.DataFrame:
    trials = read_panel(path)
    if trials.isna().to_numpy().any():
        raise DataError(f"{path}: trial matrix has missing entries")
    return trials


def cmd_audit(cfg: RunConfig, out: Path) -> int:
    path = cfg.trials or out / "trials.csv"
    trials = _read_trials(path)
    if trials.shape[1] < 2:
        raise DataError(f"{path}: PBO needs at least 2 trial columns, found {trials.shape[1]}")
    out.mkdir(parents=True, exist_ok=True)
    # Sharpe ratios are per month and in excess of the risk-free rate
    rf_month = cfg.backtest.rf / 12.0
    trials = trials - rf_month
    report = pbo_cscv(trials, cfg.partitions, cfg.sr_threshold)

    # the "selected" strategy is the full-sample Sharpe winner
    usable = trials.loc[:, trials.std(ddof=1) > 0]
    sr = usable.mean() / usable.std(ddof=1)
    chosen = str(sr.idxmax())
    mom = sharpe_moments(usable[chosen])
    d = dsr(usable, mom.sr, mom.n, mom.skew, mom.kurt, seed=cfg.seed)
    trl = min_trl(mom.sr, cfg.sr_threshold, mom.skew, mom.kurt, cfg.confidence) if mom.sr > cfg.sr_threshold \
        else math.inf
    bench = cfg.benchmarks or (list(usable.columns) if usable.shape[1] <= 20 else [])
    unknown = [b for b in bench if b not in usable.columns]
    if unknown:
        raise ConfigError(f"benchmark column(s) not in the trial matrix: {unknown}")
    if bench:
        _write_csv(psr_matrix(usable[bench]), out / "psr_matrix.csv", index_label="strategy")
    extra = {
        "selected": chosen,
        "selected_sr": mom.sr,
        "selected_skew": mom.skew,
        "selected_kurtosis": mom.kurt,
        "n_obs": mom.n,
        "psr": psr(mom.sr, cfg.sr_threshold, mom.n, mom.skew, mom.kurt),
        "min_trl": trl if math.isfinite(trl) else None,
        "confidence": cfg.confidence,
        "sr_threshold_input": cfg.sr_threshold,
        "partitions": cfg.partitions,
        "rf_monthly": rf_month,
        "seed": cfg.seed,
        "cluster_labels": dict(zip(map(str, usable.columns), d.labels.tolist())),
    }
    write_report(out, report, d, extra)
    print(f"PBO={report.pbo:.3f} slope={report.slope:.3f} prob_loss={report.prob_loss:.3f} "
          f"K={d.n_clusters} SR*={d.sr_threshold:.4f} DSR={d.probability:.3f}")
    return 0


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hsfp", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (("backtest", "run HS-FP, MVO and EW walk-forward backtests"),
                        ("sweep", "backtest every point of a parameter mesh"),
                        ("audit", "overfitting statistics for a trial matrix")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, help="INI run configuration")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--tc-bps", type=float, help="transaction cost per unit turnover, basis points")
        s.add_argument("--train-months", type=int, help="initial training window in months")
        s.add_argument("--seed", type=int, help="seed for every random choice")
        s.add_argument("--workers", type=int, help="parallel worker processes")
        if name == "sweep":
            s.add_argument("--max-configs", type=int, help="cap on mesh size")
            s.add_argument("--dry-run", action="store_true", help="only declare the mesh")
        if name == "audit":
            s.add_argument("--trials", type=Path, help="trial matrix CSV (default OUT/trials.csv)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_run_config(
            args.config,
            tc_bps=args.tc_bps,
            train_months=args.train_months,
            seed=args.seed,
            workers=args.workers,
            max_configs=getattr(args, "max_configs", None),
            trials=getattr(args, "trials", None),
        )
        if args.command == "backtest":
            return cmd_backtest(cfg, args.out)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, args.dry_run)
        return cmd_audit(cfg, args.out)
    except HsfpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in EXIT_CODES.items():
            if isinstance(exc, cls):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
