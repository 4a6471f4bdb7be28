"""Command line entry point.

    expclt run CONFIG [--seed N] [--out DIR] [--suites a,b,c] [--workers N]

Runs the suites named in the config (or the --suites override), writes one
CSV per suite plus summary.json into the output directory, prints one status
line per suite, and exits 0 exactly when every executed suite passed.

Worker-count resolution: --workers beats the EXPCLT_WORKERS environment
variable, which beats the default min(4, cpu_count). The worker count never
changes any emitted byte.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiment import (
    SUITE_NAMES,
    ConfigError,
    default_workers,
    load_config,
    run,
)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="expclt",
        description="Simulation and verification suites for products of "
        "random matrix exponentials.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    runp = sub.add_parser("run", help="execute the suites described by a JSON config")
    runp.add_argument("config", help="path to the JSON config file")
    runp.add_argument("--seed", type=int, default=None,
                      help="override master_seed from the config")
    runp.add_argument("--out", default=None,
                      help="override output_dir from the config")
    runp.add_argument("--suites", default=None,
                      help="comma-separated subset of: " + ", ".join(SUITE_NAMES))
    runp.add_argument("--workers", type=int, default=None,
                      help="process count for replicate chunks "
                      "(default: EXPCLT_WORKERS or min(4, cpu_count))")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError(f"--seed must lie in [0, 2^64), got {args.seed}")
            overrides["master_seed"] = args.seed
        if args.out is not None:
            overrides["output_dir"] = args.out
        if args.suites is not None:
            names = tuple(s.strip() for s in args.suites.split(",") if s.strip())
            bad = [s for s in names if s not in SUITE_NAMES]
            if bad or not names:
                raise ConfigError(
                    f"--suites: unknown names {bad}; valid: {list(SUITE_NAMES)}"
                )
            overrides["suites"] = names
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        workers = args.workers if args.workers is not None else default_workers()
        if workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {workers}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    print(f"ensemble: {cfg.ensemble.family} d={cfg.ensemble.dim} "
          f"rho={cfg.ensemble.rho:.6g}")
    report = run(cfg, workers=workers)
    for name, res in report.suites.items():
        status = "PASS" if res["passed"] else "FAIL"
        print(f"[{status}] {name}  ({report.timings_seconds[name]:.2f}s)")
    print(f"config digest: {report.config_digest}")
    print(f"outputs: {cfg.output_dir}/summary.json")
    return 0 if report.all_passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
