#!/usr/bin/env python3
"""Reproduce the 50-asset basket study: reduction sweep, spectral
diagnostics, output-error table and Bermudan pricing with pathwise
bounds.

The default path counts match the full study (10^6 regression paths);
pass --paths/--eval-paths/--l2-paths to downsize for a quick look.
"""

import argparse
import sys

from sdemor.cli import main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=1100)
    p.add_argument("--out", default="out/basket")
    p.add_argument("--paths", type=int, default=1_000_000)
    p.add_argument("--eval-paths", type=int, default=200_000)
    p.add_argument("--l2-paths", type=int, default=100_000)
    p.add_argument("--dt", type=float, default=1.0 / 200.0)
    p.add_argument("--workers", type=int, default=0)
    a = p.parse_args()
    return cli_main([
        "--workers", str(a.workers),
        "experiment", "--name", "basket", "--seed", str(a.seed),
        "--paths", str(a.paths), "--eval-paths", str(a.eval_paths),
        "--l2-paths", str(a.l2_paths), "--dt", str(a.dt),
        "--out", a.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
