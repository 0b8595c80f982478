"""Command-line entry point.

    bicolor run experiment.toml [--seed S ...] [--out DIR] [--format csv|svg]
                                [--alpha A] [--strategy NAME]
                                [--max-iters N] [--bit-budget B]

Config file keys mirror ExperimentConfig fields one-to-one; flags override
the file. BICOLOR_WORKERS > 1 runs the seeds in a process pool (results
are keyed by seed, so aggregation order never changes the output).
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from .harness import ExperimentConfig, emit, run_experiment, sweep_gamma


def _worker(args):
    cfg, seed = args
    cfg = replace(cfg, seeds=[seed])
    return seed, run_experiment(cfg)[0]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bicolor")
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="run the experiment described by a config file")
    runp.add_argument("config", help="toml config file")
    runp.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
    runp.add_argument("--out", help="output directory")
    runp.add_argument("--format", choices=("csv", "svg"), default="csv")
    runp.add_argument("--alpha", type=float, help="downlink cost weight")
    runp.add_argument("--strategy", help="compression strategy name")
    runp.add_argument("--max-iters", type=int, dest="max_iters")
    runp.add_argument("--bit-budget", type=float, dest="bit_budget")
    runp.add_argument("--sweep", action="store_true", help="tune gamma over the config grid")
    args = parser.parse_args(argv)

    cfg = ExperimentConfig.from_file(args.config)
    overrides = {}
    if args.seed:
        overrides["seeds"] = args.seed
    if args.out:
        overrides["out_dir"] = args.out
    for name in ("alpha", "strategy", "max_iters", "bit_budget"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = replace(cfg, **overrides)

    if args.sweep:
        result = sweep_gamma(cfg)
        print(f"best gamma: {result.best_gamma:g}")
        traces = result.traces
    else:
        workers = int(os.environ.get("BICOLOR_WORKERS", "1"))
        if workers > 1 and len(cfg.seeds) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = dict(pool.map(_worker, [(cfg, s) for s in cfg.seeds]))
            traces = [results[s] for s in cfg.seeds]
        else:
            traces = run_experiment(cfg)

    paths = emit(traces, args.format, cfg.out_dir)
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
