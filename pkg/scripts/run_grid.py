"""Run the benchmark grid and write CSV + JSON next to a printed table.

    python3 scripts/run_grid.py [--config scripts/grid.toml] [--workers 2] [--out results/]
"""

import argparse
import logging
import time
from pathlib import Path

from kappavar.cli import parse_config
from kappavar.simulation import run_grid


def main():
    here = Path(__file__).parent
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=here / "grid.toml")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    start = time.perf_counter()
    report = run_grid(parse_config(args.config), workers=args.workers)
    elapsed = time.perf_counter() - start

    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "grid.csv").write_text(report.to_csv())
    (args.out / "grid.json").write_text(report.to_json())
    print(report.to_table())
    print(f"\n{len(report.cells)} cells in {elapsed:.1f}s; wrote {args.out}/grid.csv and grid.json")


if __name__ == "__main__":
    main()
