"""Run backtest, a small parameter sweep and the overfitting audit on synthetic data.

Writes everything below ``--out`` (default ./demo_out) and prints headline
statistics for each model.

Usage: python3 scripts/pipeline_demo.py [--out demo_out] [--workers 2]
"""
import argparse
import json
from pathlib import Path

from hsfp.cli import main as cli
from hsfp.synthetic import write_fixture

SWEEP = """
[sweep]
leeway = 0.1, 0.2, 0.3
rebalance_every = 3, 6
prior_hl = 60, 84
"""


def run(args) -> None:
    data = write_fixture(args.out / "data")
    config = data / "config.ini"
    config.write_text(config.read_text() + SWEEP)

    for step in (["backtest", "--out", str(args.out / "backtest")],
                 ["sweep", "--out", str(args.out / "sweep"), "--workers", str(args.workers)],
                 ["audit", "--out", str(args.out / "sweep")]):
        code = cli(step[:1] + ["--config", str(config)] + step[1:])
        if code:
            raise SystemExit(code)

    stats = json.loads((args.out / "backtest" / "stats.json").read_text())
    for model, s in stats.items():
        print(f"{model:6s} ann_return {s['ann_return']:.4f} vol {s['ann_volatility']:.4f} "
              f"sharpe {s['sharpe']:.3f} max_dd {s['max_drawdown']:.3f}")
    audit = json.loads((args.out / "sweep" / "overfit.json").read_text())
    print(f"selected {audit['selected']}: PSR {audit['psr']:.3f}, PBO {audit['pbo']:.3f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("demo_out"))
    ap.add_argument("--workers", type=int, default=2)
    run(ap.parse_args())
