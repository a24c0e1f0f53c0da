#!/usr/bin/env python3
"""Run one or more verification configs and print a one-line verdict per config.

    python3 scripts/run_experiment.py scripts/configs/rate_additive.json
    python3 scripts/run_experiment.py scripts/configs/*.json --workers 4

Each config names its experiment kind ("rate" or "normality"); reports land
at the config's ``output`` paths, relative to the current directory.
"""
from __future__ import annotations

import argparse
import json
import sys
import time

from gpdgam.cli import EXIT_OK, main as cli_main

COMMANDS = {"rate": "verify-rate", "normality": "verify-normality"}


def run(path: str, workers: int | None, seed: int | None) -> int:
    with open(path, encoding="utf-8") as fh:
        kind = json.load(fh).get("experiment")
    if kind not in COMMANDS:
        print(f"{path}: no runnable experiment (kind {kind!r}), skipped")
        return EXIT_OK
    argv = [COMMANDS[kind], "--config", path]
    if workers is not None:
        argv += ["--workers", str(workers)]
    if seed is not None:
        argv += ["--seed", str(seed)]
    t0 = time.perf_counter()
    rc = cli_main(argv)
    print(f"{path}: exit {rc} after {time.perf_counter() - t0:.1f}s")
    return rc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("configs", nargs="+")
    ap.add_argument("--workers", type=int)
    ap.add_argument("--seed", type=int)
    args = ap.parse_args(argv)
    codes = [run(p, args.workers, args.seed) for p in args.configs]
    return max(codes)


if __name__ == "__main__":
    sys.exit(main())
