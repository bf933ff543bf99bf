"""Command-line entry point.

Exit codes: 0 = ran and all verdicts passed, 1 = ran but a verdict failed,
2 = configuration problem (bad flags, malformed TOML, out-of-range values).
Output is deterministic for a fixed config and seed: no timestamps, ordered
records, and a thread count that never changes the bytes produced.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .analysis import BoundInputs, convex_bound, optimal_eta, theorem1_rhs, theorem2_rhs
from .config import ConfigError, load_config
from .experiments import EXPERIMENTS

_SUBCOMMANDS = {
    "taylor": "taylor",
    "rate-sweep": "rate_sweep",
    "lower-bound": "lower_bound",
    "momentum-lb": "momentum_lb",
    "sensing": "sensing",
    "convex-rate": "convex_rate",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsopt",
        description="Two-point smoothed-gradient experiments and rate calculators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in _SUBCOMMANDS:
        p = sub.add_parser(name, help=f"run the {name.replace('-', ' ')} experiment")
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="write the per-record CSV here")
        p.add_argument("--json", action="store_true", help="print the JSON report")
        p.add_argument("--threads", type=int, help="worker threads (NSO_THREADS env fallback)")
        if name == "sensing":
            p.add_argument("--full", action="store_true", help="d=100, r=5 preset")

    b = sub.add_parser("bounds", help="print the certified rate quantities")
    b.add_argument("--C", type=float, required=True, help="gradient Lipschitz constant")
    b.add_argument("--D", type=float, required=True, help="value-gap scale")
    b.add_argument("--sigma", type=float, required=True, help="oracle noise level")
    b.add_argument("--H", type=float, default=0.0, help="perturbation second moment E||U||^2")
    b.add_argument("--k", type=int, default=1, help="perturbation pairs per step")
    b.add_argument("--T", type=int, default=1, help="step count")
    b.add_argument("--R", type=float, help="convex case: start distance bound")
    b.add_argument("--G", type=float, help="convex case: gradient norm bound")
    b.add_argument("--json", action="store_true", help="print JSON instead of lines")
    b.add_argument("--out", help="write name,value CSV here")
    return parser


def _resolve_threads(args) -> int:
    if getattr(args, "threads", None) is not None:
        n = args.threads
    else:
        raw = os.environ.get("NSO_THREADS")
        if raw is None:
            return 1
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"NSO_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _run_bounds(args, out) -> int:
    try:
        inputs = BoundInputs(
            C=args.C, D=args.D, sigma=args.sigma, k=args.k, T=args.T, H=args.H
        )
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    values = {
        "theorem1_rhs": theorem1_rhs(inputs),
        "theorem2_rhs": theorem2_rhs(inputs),
        "optimal_eta": optimal_eta(inputs),
    }
    if (args.R is None) != (args.G is None):
        print("config error: --R and --G must be given together", file=sys.stderr)
        return 2
    if args.R is not None:
        try:
            eta, bound = convex_bound(args.R, args.G, args.T)
        except ValueError as e:
            print(f"config error: {e}", file=sys.stderr)
            return 2
        values["convex_eta"] = eta
        values["convex_bound"] = bound
    if args.json:
        print(json.dumps(values, sort_keys=True, indent=2), file=out)
    else:
        for name, v in values.items():
            print(f"{name} = {v:.12g}", file=out)
    if args.out:
        lines = ["name,value"] + ["%s,%.17g" % (n, v) for n, v in values.items()]
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse already printed the message
        return int(e.code or 0)

    if args.command == "bounds":
        return _run_bounds(args, sys.stdout)

    experiment = _SUBCOMMANDS[args.command]
    try:
        threads = _resolve_threads(args)
        cfg = load_config(experiment, path=args.config, seed=args.seed)
        if experiment == "sensing" and getattr(args, "full", False):
            cfg.full = True
            cfg.validate()
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    _, runner = EXPERIMENTS[experiment]
    report = runner(cfg, threads=threads)

    if args.out:
        try:
            with open(args.out, "w") as fh:
                fh.write(report.to_csv())
        except OSError as e:
            print(f"config error: cannot write {args.out}: {e}", file=sys.stderr)
            return 2
    if args.json:
        sys.stdout.write(report.to_json())
    else:
        for line in report.summary_lines():
            print(line)
    return 0 if report.passed else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
