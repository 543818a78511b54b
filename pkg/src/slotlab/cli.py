"""Operator command line: gen-data, train, simulate, report, grid.

Every run is driven by one YAML config file (see README for the schema);
``--profile`` seeds the config with the desk or paper defaults when no
file is given. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 runtime error.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from . import pipeline, reporting
from .config import RunConfig, desk_profile, jobs_from_env, paper_profile
from .errors import ConfigError, DataError, SlotLabError

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(EXIT_DATA)
        except SlotLabError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_RUNTIME)

    return wrapper


def _resolve_config(
    config_path: str | None,
    profile: str | None,
    seed: int | None,
    output_dir: str | None,
) -> RunConfig:
    if config_path:
        config = RunConfig.load(config_path)
    elif profile == "paper":
        config = paper_profile()
    else:
        config = desk_profile()
    updates = {}
    if seed is not None:
        updates["seed"] = seed
    if output_dir is not None:
        updates["output_dir"] = output_dir
    return config.with_updates(**updates) if updates else config


_shared_options = [
    click.option("--config", "-c", "config_path", type=click.Path(), default=None,
                 help="Run config YAML (defaults to the selected profile)."),
    click.option("--profile", type=click.Choice(["desk", "paper"]), default="desk",
                 show_default=True, help="Base profile when no config file is given."),
    click.option("--seed", type=int, default=None, help="Override the run seed."),
    click.option("--out", "output_dir", type=click.Path(), default=None,
                 help="Override the output directory."),
]


def shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


@click.group()
def main() -> None:
    """Desk-scale lab for on-the-job learning of slot-filling NLU."""


@main.command("gen-data")
@shared_options
@_handle_errors
def cmd_gen_data(config_path, profile, seed, output_dir) -> None:
    """Generate all datasets, the ablated KB, and content hashes."""
    config = _resolve_config(config_path, profile, seed, output_dir)
    run_dir = pipeline.gen_data(config)
    click.echo(f"datasets written to {run_dir / 'data'}")


@main.command("train")
@shared_options
@_handle_errors
def cmd_train(config_path, profile, seed, output_dir) -> None:
    """Train the initial tagger on the generated data."""
    config = _resolve_config(config_path, profile, seed, output_dir)
    model_path = pipeline.train_initial(config)
    click.echo(f"initial model written to {model_path}")


@main.command("simulate")
@shared_options
@click.option(
    "--mode",
    type=click.Choice(["rpm", "rm", "stm-only", "simu-upper"], case_sensitive=False),
    default="rpm",
    show_default=True,
    help="Adaptation regime for the simulated production phase.",
)
@_handle_errors
def cmd_simulate(config_path, profile, seed, output_dir, mode) -> None:
    """Run the simulated production phase under the selected regime."""
    config = _resolve_config(config_path, profile, seed, output_dir)
    artifacts = pipeline.simulate_mode(config, mode)
    summary = artifacts.summary
    click.echo(
        f"run complete: {artifacts.out_dir} "
        f"(adaptations={summary['adaptations']}, dialogues={summary['dialogues']})"
    )


@main.command("report")
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", "output_dir", type=click.Path(), default="report", show_default=True)
@click.option("--no-plot", is_flag=True, default=False, help="Skip figure rendering.")
@_handle_errors
def cmd_report(run_dirs, output_dir, no_plot) -> None:
    """Comparison table, curve files, and figures for completed runs."""
    result = reporting.write_report(run_dirs, output_dir, plot=not no_plot)
    click.echo(result["table"])
    click.echo(f"\nreport written to {result['out_dir']}")


@main.command("grid")
@shared_options
@click.option("--seeds", default="1,2,3,4", show_default=True,
              help="Comma-separated list of run seeds.")
@click.option("--modes", default="rpm,rm,stm-only,simu-upper", show_default=True,
              help="Comma-separated list of simulation modes.")
@click.option("--jobs", type=int, default=None,
              help="Parallel seed cells (default: SLOTLAB_JOBS or 1).")
@_handle_errors
def cmd_grid(config_path, profile, seed, output_dir, seeds, modes, jobs) -> None:
    """Full experiment grid: gen-data + train + simulate per seed and mode."""
    config = _resolve_config(config_path, profile, seed, output_dir)
    try:
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--seeds must be integers, got {seeds!r}") from None
    mode_list = [m.strip() for m in modes.split(",") if m.strip()]
    if not seed_list or not mode_list:
        raise ConfigError("grid needs at least one seed and one mode")
    out_dirs = pipeline.run_grid(config, seed_list, mode_list, jobs=jobs or jobs_from_env(1))
    for path in out_dirs:
        click.echo(path)


if __name__ == "__main__":
    main()
