"""Run every AQM on the cross-traffic scenario and print the B/D/A queue table.

    python3 scripts/reproduce_table.py [--scenario scenarios/cross_traffic.toml] [--out out/table]
"""

import argparse
import sys
from pathlib import Path

from tdaqm.cli import main as cli_main

ROOT = Path(__file__).resolve().parents[1]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(ROOT / "scenarios" / "cross_traffic.toml"))
    ap.add_argument("--out", default="out/table")
    ap.add_argument("--jobs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    return cli_main(["compare", "--scenario", args.scenario, "--out", args.out,
                     "--jobs", str(args.jobs), "--seed", str(args.seed)])


if __name__ == "__main__":
    sys.exit(main())
