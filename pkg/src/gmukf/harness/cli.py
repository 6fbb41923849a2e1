"""Command line: ``gmukf run`` and ``gmukf validate``.

Exit codes: 0 success, 1 a replicate failed or a ``--check`` threshold was
missed, 2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from ..errors import ConfigError
from .config import ExperimentConfig, load_config
from .output import write_outputs
from .simulate import RunResult, run_experiment

OUTPUT_ENV = "GMUKF_OUTPUT_DIR"

log = logging.getLogger("gmukf")


def evaluate_checks(result: RunResult, checks: Dict[str, float]) -> List[str]:
    """Return one message per failed threshold (empty when all pass)."""
    failures = []
    both = "ukf" in result.filter_names and "gmukf" in result.filter_names
    if "max_rmse_ratio" in checks:
        if not both:
            failures.append("max_rmse_ratio needs both filters enabled")
        else:
            ratio = result.rmse("gmukf") / result.rmse("ukf")
            if not np.all(ratio <= checks["max_rmse_ratio"]):
                failures.append(f"rmse ratio {np.round(ratio, 4).tolist()} exceeds "
                                f"{checks['max_rmse_ratio']}")
    if "max_rmse" in checks:
        for name in result.filter_names:
            rmse = result.rmse(name)
            if not np.all(rmse <= checks["max_rmse"]):
                failures.append(f"{name} rmse {rmse.tolist()} exceeds {checks['max_rmse']}")
    if "min_detection_rate" in checks:
        det = result.detection()
        rate = det["flagged_true"] / det["scheduled"] if det["scheduled"] else float("nan")
        if not rate >= checks["min_detection_rate"]:
            failures.append(f"detection rate {rate:.4f} below {checks['min_detection_rate']}")
    if "min_irls_convergence" in checks:
        frac = result.irls_stats().get("settled_fraction", float("nan"))
        if not frac >= checks["min_irls_convergence"]:
            failures.append(f"IRLS settled fraction {frac:.4f} below "
                            f"{checks['min_irls_convergence']}")
    return failures


def _load(path) -> Optional[ExperimentConfig]:
    try:
        return load_config(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    print(f"{args.config}: ok (n={cfg.model.n}, m={cfg.model.m}, horizon={cfg.horizon}, "
          f"replicates={cfg.replicates})")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return 2
    out_dir = args.out or os.environ.get(OUTPUT_ENV) or None
    try:
        cfg = cfg.with_overrides(seed=args.seed, replicates=args.replicates, output_dir=out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    result = run_experiment(cfg, workers=args.workers)
    try:
        paths = write_outputs(result)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return 1

    status = 0
    failed = [r.index for r in result.replicates if r.failed]
    for name in result.filter_names:
        print(f"{name:6s} rmse {json.dumps(np.round(result.rmse(name), 8).tolist())}")
    if "gmukf" in result.filter_names:
        print(f"irls   {json.dumps(result.irls_stats(), sort_keys=True)}")
        det = result.detection()
        if det["scheduled"]:
            print(f"detect {json.dumps(det, sort_keys=True)}")
    print(f"wrote {len(paths)} file(s) to {paths[-1].parent}")
    if failed:
        print(f"FAILED replicates: {failed}", file=sys.stderr)
        status = 1
    if args.check:
        problems = evaluate_checks(result, cfg.checks)
        for p in problems:
            print(f"CHECK FAILED: {p}", file=sys.stderr)
        if problems:
            status = 1
        elif cfg.checks:
            print("checks passed")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmukf", description="UKF vs GM-UKF Monte Carlo runner")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write traces and a summary")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--replicates", type=int)
    run.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    run.add_argument("--check", action="store_true",
                     help="exit nonzero if the config's checks thresholds are not met")
    run.add_argument("--workers", type=int, default=1, help="parallel replicate processes")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="validate a config file")
    val.add_argument("--config", required=True)
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
