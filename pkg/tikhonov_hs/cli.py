import argparse
import logging
import logging.config
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from tikhonov_hs import artifacts
from tikhonov_hs.experiments import (
    FIGURE2_RULES,
    Benchmark,
    apply_rule,
    run_oversmoothing_contrast,
    run_rate_study,
    run_rule_comparison,
    run_table1,
)
from tikhonov_hs.forward_model import ForwardOverflowError
from tikhonov_hs.hilbert_scale import GridMismatchError
from tikhonov_hs.parameter_choice import SelectionError
from tikhonov_hs.settings import FEATURED_DELTA, FIGURE3_ALPHAS, ConfigError, RunConfig, load_config

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2

REPRODUCTIONS = ("table1", "figure1", "figure2", "figure3")

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "format": "{asctime} [{levelname:5}] {name} - {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "level": "DEBUG",
            "class": "logging.StreamHandler",
            "formatter": "default",
            "stream": "ext://sys.stderr",
        },
    },
    "root": {
        "level": "INFO",
        "handlers": ["console"],
    },
}


class RunFailure(RuntimeError):
    pass


def configure_logging(verbose: bool = False) -> None:
    config = {**LOGGING, "root": {**LOGGING["root"], "level": "DEBUG" if verbose else "INFO"}}
    logging.config.dictConfig(config)


def _table1(config: RunConfig, out: Path) -> list[Path]:
    report = run_table1(config.c_bp_values, config.noise.deltas, config.noise.seeds, config)
    return [
        artifacts.write_csv(out / "table1.csv", report.header, report.rows()),
        artifacts.write_csv(out / "table1_cells.csv", report.cell_header, report.cell_rows()),
    ]


def command_solve(config: RunConfig) -> list[Path]:
    out = Path(config.output_dir)
    if config.experiment == "table1":
        written = _table1(config, out)
    elif config.experiment == "single":
        benchmark = Benchmark(config)
        reconstruction = benchmark.minimize(config.delta, config.noise.seed, config.alpha)
        if not reconstruction.converged:
            raise RunFailure(f"the solver did not converge for alpha={config.alpha:.4e}")
        written = [artifacts.write_reconstruction(out / "reconstruction.csv", reconstruction, benchmark.x_dag)]
    else:
        benchmark = Benchmark(config)
        path = benchmark.path(config.delta, config.noise.seed)
        if all(r.error is not None for r in path):
            raise RunFailure("every reconstruction of the path failed")
        written = [artifacts.write_path(out / "path.csv", path, benchmark.x_dag)]
    return written + [artifacts.write_manifest(out, "solve", config, written)]


def command_select(config: RunConfig) -> list[Path]:
    out = Path(config.output_dir)
    benchmark = Benchmark(config)
    path = benchmark.path(config.delta, config.noise.seed)
    selection = apply_rule(config.rule, path, config.delta, benchmark.na, benchmark.x_dag)
    log.info("%s selected alpha=%.4e", config.rule.label, selection.alpha_star)
    written = [
        artifacts.write_json(out / "selection.json", selection.to_record()),
        artifacts.write_reconstruction(out / "reconstruction.csv", selection.reconstruction, benchmark.x_dag),
    ]
    return written + [artifacts.write_manifest(out, "select", config, written)]


def command_reproduce(target: str, config: RunConfig) -> list[Path]:
    out = Path(config.output_dir)
    if target == "table1":
        written = _table1(config, out)
    elif target == "figure1":
        c_bp = config.rule.c_bp if config.rule.c_bp is not None else 0.1
        report = run_rate_study(c_bp, config.noise.deltas, config.noise.seeds, config)
        written = [artifacts.write_csv(out / "figure1.csv", report.header, report.rows())]
    elif target == "figure2":
        report = run_rule_comparison(FEATURED_DELTA, FIGURE2_RULES, config)
        written = [artifacts.write_csv(out / "figure2.csv", report.header, report.rows())]
    elif target == "figure3":
        report = run_oversmoothing_contrast(FEATURED_DELTA, FIGURE3_ALPHAS, config)
        written = [artifacts.write_csv(out / "figure3.csv", report.header, report.rows())]
        for entry in report.entries:
            index = FIGURE3_ALPHAS.index(entry.alpha)
            name = f"figure3_{entry.solution}_alpha{index}.csv"
            written.append(
                artifacts.write_reconstruction(
                    out / name, entry.reconstruction, config.make_solution(entry.reconstruction.x.grid, entry.solution)
                )
            )
    else:
        raise ConfigError(f"target: unknown reproduction {target!r}")
    return written + [artifacts.write_manifest(out, f"reproduce {target}", config, written)]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="YAML run configuration")
    common.add_argument("--seed", type=int, default=None, help="override noise.seed")
    common.add_argument("--out", default=None, help="override output_dir")
    common.add_argument("--jobs", type=int, default=None, help="override jobs")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="tikhonov-hs",
        description="Tikhonov regularization with oversmoothing penalties in Hilbert scales.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="reconstruct for one alpha, a path or a rate table")
    commands.add_parser("select", parents=[common], help="solve a path and apply the configured rule")
    reproduce = commands.add_parser("reproduce", parents=[common], help="run a scripted numerical study")
    reproduce.add_argument("target", choices=REPRODUCTIONS)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        config = load_config(args.config).with_overrides(seed=args.seed, out=args.out, jobs=args.jobs)
        if args.command == "solve":
            written = command_solve(config)
        elif args.command == "select":
            written = command_select(config)
        else:
            written = command_reproduce(args.target, config)
    except (ConfigError, GridMismatchError) as err:
        log.error("invalid configuration: %s", err)
        return EXIT_CONFIG
    except (SelectionError, ForwardOverflowError, RunFailure, np.linalg.LinAlgError) as err:
        log.error("%s failed: %s", args.command, err)
        return EXIT_FAILURE
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
