"""Command-line harness.

Subcommands map one-to-one onto the experiment runners::

    netklt hybrid            --config cfg.json [--seed N] [--restarts N] [--out DIR]
    netklt distributed-noisy --config cfg.json ...
    netklt multiple-unicast  --config cfg.json ...
    netklt bounds            --config cfg.json ...
    netklt solve             --config cfg.json ...

Exit codes: 0 success, 2 configuration error (bad schema, missing file,
empty grid, inconsistent graph/model), 3 numerical failure.  The seed
resolves as --seed flag, then the LTN_SEED environment variable, then the
config file, then 0.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ExperimentConfig, load_json
from .errors import ConfigError, GraphError, ModelError, NetkltError, SolverError
from .experiments import (
    run_bounds,
    run_distributed_noisy,
    run_hybrid,
    run_multiple_unicast,
    run_solve,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_RUNNERS = {
    "hybrid": run_hybrid,
    "distributed-noisy": run_distributed_noisy,
    "multiple-unicast": run_multiple_unicast,
    "bounds": run_bounds,
    "solve": run_solve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netklt",
        description="Design and bound reduced-dimension linear transform "
        "codes on acyclic networks.",
    )
    sub = parser.add_subparsers(dest="scenario", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name, help=f"run the {name} scenario")
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="RNG seed override")
        p.add_argument("--restarts", type=int, default=None,
                       help="number of random restarts")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def _resolve_seed(flag_seed, raw_cfg) -> int:
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get("LTN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"LTN_SEED={env!r} is not an integer") from exc
    return int(raw_cfg.get("seed", 0))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_json(args.config)
        overrides = {
            "seed": _resolve_seed(args.seed, raw),
            "restarts": args.restarts,
            "out": args.out,
        }
        config = ExperimentConfig.from_dict(
            raw,
            args.scenario,
            base_dir=os.path.dirname(os.path.abspath(args.config)),
            overrides=overrides,
        )
        result = _RUNNERS[args.scenario](config)
    except (ConfigError, GraphError, ModelError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, NetkltError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    for key, value in sorted(result.items()):
        if isinstance(value, str):
            print(f"{key}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
