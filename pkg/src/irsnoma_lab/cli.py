"""Command-line front-end for the experiment harness.

Subcommands: generate, pipeline, sweep-power, sweep-elements, compare-oma,
oracle, cluster, predict.  Every subcommand accepts --config <path> (a JSON
document of :class:`~irsnoma_lab.harness.ExperimentConfig` fields), --seed,
--out, and --algorithm; flags override the config file.  Exit codes: 0 on
success, 1 on validation errors, 2 when a run ends infeasible or without a
result.
"""

from __future__ import annotations

import argparse
import sys

from .harness import (
    ALGORITHMS,
    ExperimentConfig,
    cmd_cluster,
    cmd_compare_oma,
    cmd_generate,
    cmd_oracle,
    cmd_pipeline,
    cmd_predict,
    cmd_sweep_elements,
    cmd_sweep_power,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NO_RESULT = 2


def _common_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON experiment config file")
    parser.add_argument("--seed", type=int, help="master seed (replaces the seed list)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--algorithm", choices=ALGORITHMS, help="optimizer to run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irsnoma",
        description="IRS-aided MISO-NOMA experiment harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "write a scenario JSON and ground-truth trajectories"),
        ("pipeline", "run the per-slot predict/cluster/optimize pipeline"),
        ("sweep-power", "sum rate over the transmit-power grid"),
        ("sweep-elements", "sum rate over surface element counts"),
        ("compare-oma", "paired NOMA vs TDMA comparison"),
        ("oracle", "exhaustive optimum on a small instance"),
        ("cluster", "cluster one channel draw"),
        ("predict", "train the mobility predictor and emit forecasts"),
    ]:
        _common_flags(sub.add_parser(name, help=help_text))
    return parser


def load_config(args) -> ExperimentConfig:
    overrides = {
        "seeds": (args.seed,) if args.seed is not None else None,
        "out_dir": args.out,
        "algorithm": args.algorithm,
    }
    if args.config:
        return ExperimentConfig.from_json(
            args.config, **{k: v for k, v in overrides.items() if v is not None}
        )
    return ExperimentConfig().with_overrides(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "generate":
            paths = cmd_generate(config)
            print(f"wrote {paths['scenario']} and {paths['trajectories']}")
        elif args.command == "pipeline":
            rows = cmd_pipeline(config)
            feasible = sum(int(r[3]) for r in rows)
            print(f"pipeline: {len(rows)} slot rows, {feasible} feasible")
            if feasible == 0:
                return EXIT_NO_RESULT
        elif args.command == "sweep-power":
            rows = cmd_sweep_power(config)
            print(f"sweep-power: {len(rows)} rows")
        elif args.command == "sweep-elements":
            rows = cmd_sweep_elements(config)
            print(f"sweep-elements: {len(rows)} rows")
        elif args.command == "compare-oma":
            rows = cmd_compare_oma(config)
            print(f"compare-oma: {len(rows)} rows")
        elif args.command == "oracle":
            result = cmd_oracle(config)
            if result.feasible_count == 0:
                print("oracle: no feasible configuration", file=sys.stderr)
                return EXIT_NO_RESULT
            print(
                f"oracle: best rate {result.best_rate} over "
                f"{result.evaluated_count} evaluations"
            )
        elif args.command == "cluster":
            fit = cmd_cluster(config)
            print(f"cluster: occupancy {list(fit.occupancy())}")
        elif args.command == "predict":
            rows = cmd_predict(config)
            print(f"predict: {len(rows)} forecast rows")
    except (ValueError, OSError, KeyError, TypeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
