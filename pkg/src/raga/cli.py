"""Command-line front end: ``raga run|sweep|verify-bounds|gradcheck|median-bench``."""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import aggregation
from .config import ConfigError, load_config
from .data import ConfigurationError
from .experiment import OUTPUT_ENV, ExperimentError, parse_vary, run_experiment, run_sweep
from .models import GRADCHECK_THRESHOLDS, gradcheck_suite


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"seeds": [args.seed]})
    return config


def cmd_run(args) -> int:
    out = run_experiment(_load(args))
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    varies = [parse_vary(v) for v in args.vary]
    out = run_sweep(_load(args), varies, workers=args.workers)
    print(f"wrote {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import verify_bounds

    report = verify_bounds(_load(args), seed_count=args.seed_count)
    c = report.constants
    print(f"constants: L={c.L} mu={c.mu} sigma={c.sigma:.6g} theta={c.theta:.6g} G={c.G:.6g} "
          f"epsilon={c.epsilon} C_alpha={c.c_alpha:.6g} seeds={len(report.seeds)}")
    for check in report.checks:
        print(check.line())
    return 0 if report.passed else 1


def cmd_gradcheck(args) -> int:
    ok = True
    for kind, (step, limit) in GRADCHECK_THRESHOLDS.items():
        worst = max(r.max_rel_error for r in gradcheck_suite(kind, args.cases, args.seed or 0))
        passed = worst < limit
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {kind}: step={step:g} max_rel_error={worst:.3g} limit={limit:g}")
    return 0 if ok else 1


def cmd_median_bench(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    iters, millis = [], []
    for _ in range(args.trials):
        pts = rng.standard_normal((args.points, args.dim))
        w = rng.random(args.points)
        start = time.perf_counter()
        res = aggregation.geometric_median(pts, w / w.sum(), args.epsilon)
        millis.append((time.perf_counter() - start) * 1000)
        iters.append(res.iterations)
    print(f"points={args.points} dim={args.dim} epsilon={args.epsilon:g} trials={args.trials}")
    print(f"iterations: mean={np.mean(iters):.1f} max={max(iters)}")
    print(f"time_ms: mean={np.mean(millis):.3f} max={max(millis):.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raga", description=__doc__.split(":")[0])
    parser.add_argument("--seed", type=int, default=None, help="replace the config's seed list with this one seed")
    sub = parser.add_subparsers(dest="command", required=True)
    epilog = f"The {OUTPUT_ENV} environment variable overrides the config's output_dir."

    p = sub.add_parser("run", help="run one experiment config", epilog=epilog)
    p.add_argument("config")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run the Cartesian product of --vary values", epilog=epilog)
    p.add_argument("config")
    p.add_argument("--vary", action="append", default=[], metavar="KEY=V1,V2",
                   help="short name (attack, aggregator, phi, byz_fraction, seed, ...) or dotted config path")
    p.add_argument("--workers", type=int, default=1, help="sweep cells run in parallel processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-bounds", help="check the theoretical bounds on a quadratic config")
    p.add_argument("config")
    p.add_argument("--seed-count", type=int, default=None, help="trainer seeds averaged for expectations")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model family")
    p.add_argument("--cases", type=int, default=100)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("median-bench", help="time the geometric median on random point sets")
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--dim", type=int, default=7850)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_median_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, ExperimentError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
