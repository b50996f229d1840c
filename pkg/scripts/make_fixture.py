"""Regenerate the bundled synthetic dataset and its golden backtest statistics.

Usage: python3 scripts/make_fixture.py [--out tests/data]
"""
import argparse
import shutil
import tempfile
from pathlib import Path

from hsfp.cli import main
from hsfp.synthetic import write_fixture


def run(out: Path) -> None:
    write_fixture(out)
    with tempfile.TemporaryDirectory() as tmp:
        code = main(["backtest", "--config", str(out / "config.ini"), "--out", tmp])
        if code:
            raise SystemExit(code)
        shutil.copy(Path(tmp) / "stats.json", out / "golden_stats.json")
    print(f"fixture and golden stats written to {out}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "tests" / "data")
    run(ap.parse_args().out)
