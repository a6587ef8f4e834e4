#!/usr/bin/env python3
"""Reproduce the 50-asset max-call study (identity output, highly
correlated noise): reduction sweep to dimension six, spectral
diagnostics and Bermudan pricing with pathwise bounds."""

import argparse
import sys

from sdemor.cli import main as cli_main


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", default="out/maxcall")
    p.add_argument("--paths", type=int, default=400_000)
    p.add_argument("--eval-paths", type=int, default=200_000)
    p.add_argument("--l2-paths", type=int, default=50_000)
    p.add_argument("--dt", type=float, default=1.0 / 200.0)
    p.add_argument("--workers", type=int, default=0)
    a = p.parse_args()
    return cli_main([
        "--workers", str(a.workers),
        "experiment", "--name", "maxcall", "--seed", str(a.seed),
        "--paths", str(a.paths), "--eval-paths", str(a.eval_paths),
        "--l2-paths", str(a.l2_paths), "--dt", str(a.dt),
        "--out", a.out,
    ])


if __name__ == "__main__":
    sys.exit(main())
