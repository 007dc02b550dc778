"""Command-line entry point: ``toxicflow <stage> --config run.json --out DIR``.

Every subcommand runs one persisted stage; ``run`` chains them all and
writes the manifest. Exit codes: 0 success, 2 config error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from .pipeline import ConfigError, Run, RunConfig, StageError, error_exit_code

STAGES = ("generate", "label", "featurize", "warmup", "deploy", "evaluate", "backtest", "run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toxicflow", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "run" else "run all stages")
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--out", help="output directory (env TOXICFLOW_OUT overrides the config)")
        p.add_argument("--seed", type=int)
        p.add_argument("--horizons", type=float, nargs="+", help="horizons in seconds")
        p.add_argument("--models", nargs="+", choices=["pulse", "logreg", "mle"])
        p.add_argument("--warmup-days", type=int)
        p.add_argument("--epochs", type=int, help="warmup epochs")
        p.add_argument("--clocks", nargs="+", choices=["time", "txn", "vol"])
        p.add_argument("--no-client-features", action="store_true")
        p.add_argument("--per-client", action="store_true")
        p.add_argument("--clock-sweep", action="store_true")
    return parser


def config_from_args(args) -> RunConfig:
    d = {}
    if args.config:
        try:
            with open(args.config) as fh:
                d = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    if args.seed is not None:
        d["seed"] = args.seed
    if args.horizons:
        d["horizons"] = args.horizons
    if args.models:
        d["models"] = args.models
    if args.warmup_days is not None:
        d["warmup_days"], d["warmup_fraction"] = args.warmup_days, None
    if args.epochs is not None:
        d["warmup"] = {**d.get("warmup", {}), "epochs": args.epochs}
    if args.clocks:
        d["clocks"] = args.clocks
    if args.no_client_features:
        d["client_features"] = False
    if args.per_client:
        d["per_client"] = True
    if args.clock_sweep:
        d["clock_sweep"] = True
    return RunConfig.from_dict(d)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run = Run(config_from_args(args), args.out)
        if args.stage == "run":
            manifest = run.run_all()
            print(f"wrote {run.out} (manifest {manifest['manifest_hash'][:12]})")
        else:
            getattr(run, args.stage)()
            print(f"{args.stage}: done in {run.out}")
    except (ConfigError, StageError, ValueError, OSError, ArithmeticError) as e:
        print(f"error: {e}", file=sys.stderr)
        code = error_exit_code(e)
        return code if code != 1 else 3 if isinstance(e, (ValueError, OSError)) else 1
    return 0
