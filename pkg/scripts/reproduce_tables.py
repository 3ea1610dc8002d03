#!/usr/bin/env python3
"""Run all four benchmark sweeps from the shipped configs.

Usage:
    python scripts/reproduce_tables.py [--out DIR] [--tables 1,2,3,4]
                                       [--jobs N] [--seed N]

Each sweep writes <out>/table<k>/table.csv with per-row medians over the
configured seed replications.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from robinrec.cli import main as cli_main

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results")
    parser.add_argument("--tables", default="1,2,3,4")
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    status = 0
    for k in args.tables.split(","):
        k = k.strip()
        config = os.path.join(CONFIG_DIR, f"table{k}.toml")
        outdir = os.path.join(args.out, f"table{k}")
        print(f"== sweep {k} -> {outdir}")
        argv = ["table", "--config", config, "--out", outdir, "--jobs", str(args.jobs)]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        rc = cli_main(argv)
        status = max(status, rc)
    return status


if __name__ == "__main__":
    sys.exit(main())
