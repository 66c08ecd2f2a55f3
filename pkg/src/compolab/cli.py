"""Command-line entry point: ``compolab <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import experiments as ex
from .artifacts import ExperimentConfig, parse_kv_text, write_run
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3

SUBCOMMANDS = {
    "cos4": (ex.run_cos4, ex.COS4_DEFAULTS, "depth comparison on f(x) = cos(4x)"),
    "scale": (ex.run_scaling_study, ex.SCALING_DEFAULTS, "shallow vs deep scaling study"),
    "qpoly": (ex.run_q_study, ex.QPOLY_DEFAULTS, "staged construction of the Q polynomial"),
    "boolean": (ex.run_boolean_demo, ex.BOOLEAN_DEFAULTS, "Boolean Fourier low-order / sparse demo"),
    "vc": (ex.run_vc, ex.VC_DEFAULTS, "VC-dimension bounds"),
    "gauss-fit": (ex.run_gauss_fit, ex.GAUSS_FIT_DEFAULTS, "Gaussian network fit on grid centers"),
}


def _parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compolab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, defaults, help_text) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text,
                           epilog="keys: " + ", ".join(f"{k}={v}" for k, v in defaults.items()))
        p.add_argument("--config", type=Path, help="key = value file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        p.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
        p.add_argument("--out", type=Path, help="output directory (default $COMPOLAB_OUT/<command>)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        if name == "cos4":
            group = p.add_mutually_exclusive_group()
            group.add_argument("--reduced", action="store_const", const="reduced", dest="preset",
                               help="6k/6k samples, 200 epochs (default)")
            group.add_argument("--full", action="store_const", const="full", dest="preset",
                               help="60k/60k samples, 2000 epochs, batch 3000, lr 1e-4")
    v = sub.add_parser("verify", help="run the acceptance suite")
    v.add_argument("--only", help="comma-separated criterion numbers")
    v.add_argument("--out", type=Path, help="directory for the acceptance data files")
    return parser


def resolve_config(args) -> ExperimentConfig:
    _, defaults, _ = SUBCOMMANDS[args.command]
    file_values = parse_kv_text(args.config.read_text()) if args.config else {}
    overrides = _parse_sets(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.command == "cos4":
        preset = getattr(args, "preset", None) or overrides.get("preset") or file_values.get("preset") or "reduced"
        defaults = ex.cos4_defaults(preset)
    return ExperimentConfig.resolve(args.command, defaults, file_values, overrides, args.out, args.jobs)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            from .acceptance import run_acceptance

            only = [int(k) for k in args.only.split(",")] if args.only else None
            results = run_acceptance(only=only, out_dir=args.out)
            return EXIT_OK if all(r.passed for r in results) else EXIT_ACCEPTANCE
        config = resolve_config(args)
        runner = SUBCOMMANDS[args.command][0]
        started = datetime.now(timezone.utc)
        result = runner(config)
        manifest = write_run(config, result, started)
        for name in result.files:
            print(config.out_dir / name)
        print(manifest)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
