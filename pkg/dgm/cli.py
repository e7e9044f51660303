"""
cli.py
Command-line entry point.

Subcommands:
    synth            run the pipeline, write synthetic.csv + reports + manifest
    eval             evaluate an existing synthetic CSV
    dummy            write a dummy-data ratio sweep
    experiment NAME  run a sweep preset, write NAME.csv
    validate-config  parse and check a configuration

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
DGM_JOBS caps --jobs; DGM_LOG_LEVEL sets the log level (default INFO).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from rich import print as rich_print
from rich.logging import RichHandler
from rich.markup import escape

from dgm import __version__, max_jobs
from dgm.dummy_data import DummySpec, ratio_sweep, write_sweep
from dgm.experiments import ExperimentPreset, run_experiment
from dgm.pipeline import ConfigError, PipelineError, load_config, run_eval, run_synth, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dgm", description="Disjoint generative models for tabular data")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        p.add_argument("--config", required=True, help="YAML pipeline configuration")
        if out:
            p.add_argument("--out", required=True, help="Output directory")
        p.add_argument("--seed", type=int, default=None, help="Master seed (overrides seeds.master)")

    p = sub.add_parser("synth", help="Generate a synthetic table and its report")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="Parallel workers")

    p = sub.add_parser("eval", help="Evaluate an existing synthetic CSV")
    common(p)
    p.add_argument("--synthetic", required=True, help="Synthetic CSV with the dataset's columns")

    p = sub.add_parser("dummy", help="Write dummy tables over the experiment gamma grid")
    p.add_argument("--config", default=None, help="Optional config (dataset.dummy, experiment.gammas)")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--seed", type=int, default=0, help="First dummy seed")
    p.add_argument("--repeats", type=int, default=10, help="Seeds per gamma")

    p = sub.add_parser("experiment", help="Run a sweep preset")
    p.add_argument("preset", choices=[preset.value for preset in ExperimentPreset])
    common(p)
    p.add_argument("--repeats", type=int, default=None, help="Repeats (overrides seeds.repeats)")
    p.add_argument("--jobs", type=int, default=1, help="Parallel sweep tasks")

    p = sub.add_parser("validate-config", help="Parse and check a configuration")
    common(p, out=False)
    return parser


def setup_logging(level: str | None = None) -> None:
    level = (level or os.getenv("DGM_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(level=level, format="%(message)s", datefmt="[%X]",
                        handlers=[RichHandler(rich_tracebacks=False)], force=True)


def _dummy(args) -> None:
    base, gammas = DummySpec(), None
    if args.config:
        config = load_config(args.config)
        base = config.dataset.dummy or base
        gammas = config.experiment.gammas
    seeds = list(range(args.seed, args.seed + args.repeats))
    items = ratio_sweep(base, gammas, seeds) if gammas else ratio_sweep(base, seeds=seeds)
    manifest = write_sweep(items, args.out)
    rich_print(f"[bold green]Wrote {len(items)} dummy tables[/bold green] ({manifest})")


def run(args) -> int:
    if args.command == "dummy":
        _dummy(args)
        return EXIT_OK
    config = load_config(args.config)
    if args.command == "validate-config":
        names = validate_config(config)
        rich_print(f"[bold green]Config OK[/bold green]: {len(names)} columns, "
                   f"{config.partition.n_p} partition(s), {config.join.strategy.value} join")
    elif args.command == "synth":
        outcome = run_synth(config, args.out, seed=args.seed, jobs=max_jobs(args.jobs))
        rich_print(f"[bold green]Synthesized {outcome.synthetic.n} rows[/bold green] -> {args.out}")
        rich_print(outcome.report.to_dict())
    elif args.command == "eval":
        report = run_eval(config, args.synthetic, args.out, seed=args.seed)
        rich_print(report.to_dict())
    elif args.command == "experiment":
        if args.repeats is not None and args.repeats < 1:
            raise ConfigError(f"--repeats must be >= 1, got {args.repeats}.")
        frame = run_experiment(args.preset, config, args.out, repeats=args.repeats, seed=args.seed,
                               jobs=max_jobs(args.jobs))
        rich_print(f"[bold green]{args.preset}[/bold green]: {len(frame)} rows -> {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return run(args)
    except ConfigError as e:
        rich_print(f"[bold red]Configuration error:[/bold red] {escape(str(e))}")
        return EXIT_CONFIG
    except PipelineError as e:
        rich_print(f"[bold red]Pipeline failed at stage '{e.stage}':[/bold red] {escape(str(e))}")
        return EXIT_RUNTIME
    except Exception as e:
        rich_print(f"[bold red]Error:[/bold red] {escape(str(e))}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
