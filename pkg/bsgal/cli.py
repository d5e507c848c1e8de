#!/usr/bin/env python3
"""
bsgal CLI - streaming selection of generated training data.

This CLI trains the streaming selector and its controls on a synthetic
long-tailed world, studies contribution scores by noise tier, sweeps
ablations and collects run summaries into comparison tables.
"""

import contextlib
import dataclasses
import logging
from pathlib import Path
from typing import Optional

import click

from bsgal import experiments
from bsgal.config import ExperimentConfig, load_config
from bsgal.errors import BsgalError, ConfigError, DimensionError, ParameterError
from bsgal.output.artifacts import read_json
from bsgal.transform.trainer import RunMode
from bsgal.utils import logger

TRAIN_MODES = [RunMode.BSGAL.value, RunMode.BASELINE.value, RunMode.RANDOM_DROPOUT.value, RunMode.OFFLINE.value]


class ConfigFailure(click.ClickException):
    """Bad config, bad override or a run that cannot be built (exit 3)."""
    exit_code = 3


class RuntimeFailure(click.ClickException):
    """Anything that went wrong once the run was under way (exit 4)."""
    exit_code = 4


@contextlib.contextmanager
def exit_codes():
    try:
        yield
    except ConfigError as e:
        raise ConfigFailure(str(e))
    except DimensionError as e:
        raise RuntimeFailure(str(e))
    except ParameterError as e:
        raise ConfigFailure(str(e))
    except BsgalError as e:
        raise RuntimeFailure(f"{type(e).__name__}: {e}")
    except click.ClickException:
        raise
    except Exception as e:
        logger.debug("Run failed", exc_info=True)
        raise RuntimeFailure(f"{type(e).__name__}: {e}")


def config_options(f):
    f = click.option(
        '--seed',
        type=int,
        default=None,
        help='Run a single seed instead of the seeds listed in the config'
    )(f)
    f = click.option(
        '--out',
        type=click.Path(file_okay=False, path_type=Path),
        envvar='GAL_OUT_DIR',
        default=None,
        help='Output root (default: $GAL_OUT_DIR, then output_dir from the config)'
    )(f)
    f = click.option(
        '--set',
        'overrides',
        multiple=True,
        metavar='KEY=VALUE',
        help='Override a config value, e.g. --set run.K=0 (repeatable)'
    )(f)
    f = click.option(
        '--config',
        'config_path',
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help='TOML experiment config (default: built-in defaults)'
    )(f)
    return f


def resolve_config(
    config_path: Optional[Path],
    overrides: tuple[str, ...],
    out: Optional[Path],
    seed: Optional[int],
    pretrained: Optional[Path] = None,
) -> ExperimentConfig:
    config = load_config(config_path, overrides)
    if out is not None:
        config = config.with_output_dir(out)
    if seed is not None:
        config = config.with_seed(seed)
    if pretrained is not None:
        config = dataclasses.replace(config, pretrained=str(pretrained))
    return config


@click.group()
@click.version_option(version="0.1.0")
def cli():
    """
    bsgal CLI - Score generated training data while you train on it.

    Every command reads an experiment config (TOML), writes its artifacts
    under the output root and exits 0 on success, 2 on usage errors,
    3 on config errors and 4 on runtime errors.
    """
    logging.basicConfig(format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@cli.command()
@click.argument('mode', type=click.Choice(TRAIN_MODES, case_sensitive=False))
@config_options
@click.option(
    '--rate-from',
    type=click.Path(exists=True, path_type=Path),
    default=None,
    help='summary.json (or run directory) of a bsgal run whose acceptance rate random-dropout should match'
)
@click.option(
    '--rate',
    type=click.FloatRange(0.0, 1.0),
    default=None,
    help='Acceptance rate for random-dropout, instead of --rate-from'
)
@click.option(
    '--pretrained',
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help='params.galp of a real-only run, for offline filtering'
)
def train(
    mode: str,
    config_path: Optional[Path],
    overrides: tuple[str, ...],
    out: Optional[Path],
    seed: Optional[int],
    rate_from: Optional[Path],
    rate: Optional[float],
    pretrained: Optional[Path],
):
    """
    Train one run per seed and write its artifacts.

    Examples:
        bsgal train bsgal --config configs/default.toml
        bsgal train baseline --set run.K=0
        bsgal train random-dropout --rate-from runs/default/bsgal/seed-0/summary.json
    """
    with exit_codes():
        config = resolve_config(config_path, overrides, out, seed, pretrained)
        click.echo(f"⏳ Training {mode} for seeds {list(config.seeds)}")
        written = experiments.train(config, mode.lower(), rate=rate, rate_from=rate_from)
        for artifacts in written:
            summary = read_json(artifacts.summary)
            click.echo(
                f"\t✅ seed {summary['seed']}: {summary['mode']} final accuracy {summary['final_accuracy']:.4f}, "
                f"acceptance rate {summary['acceptance_rate']:.3f}"
            )
        click.echo(f"💾 Artifacts in {written[0].root.parent.absolute()}")


@cli.command()
@config_options
@click.option(
    '--samples-per-tier',
    '-n',
    type=click.IntRange(min=1),
    default=None,
    help='Generated samples to score per noise tier (default: distribution.samples_per_tier)'
)
@click.option(
    '--pretrained',
    type=click.Path(exists=True, dir_okay=False, path_type=Path),
    default=None,
    help='params.galp of a real-only run (default: pretrained from the config)'
)
def distribution(
    config_path: Optional[Path],
    overrides: tuple[str, ...],
    out: Optional[Path],
    seed: Optional[int],
    samples_per_tier: Optional[int],
    pretrained: Optional[Path],
):
    """
    Score the real training data (tier 0) and generated samples of every other
    noise tier under a pretrained model.

    Writes per-tier histograms and mean/std tables.

    Examples:
        bsgal distribution --pretrained runs/default/real-only/seed-0/params.galp -n 1000
    """
    with exit_codes():
        config = resolve_config(config_path, overrides, out, seed, pretrained)
        click.echo(f"⏳ Scoring {samples_per_tier or config.distribution.samples_per_tier} samples per tier")
        for path in experiments.distribution(config, samples_per_tier):
            click.echo(f"\t✅ {path.absolute()}")


@cli.command()
@click.argument('axis', type=click.Choice(experiments.AXES, case_sensitive=False))
@click.option(
    '--values',
    '-v',
    required=True,
    help='Comma-separated values to compare, e.g. 0.05,0.1,0.3'
)
@config_options
def ablate(
    axis: str,
    values: str,
    config_path: Optional[Path],
    overrides: tuple[str, ...],
    out: Optional[Path],
    seed: Optional[int],
):
    """
    Sweep one setting and write a comparison table.

    Examples:
        bsgal ablate beta --values 0.05,0.1,0.3,0.5,0.8
        bsgal ablate estimator -v loss_diff,grad_dot,grad_cache,grad_cache_global
        bsgal ablate mode -v bsgal,baseline,real-only,random-dropout
    """
    with exit_codes():
        config = resolve_config(config_path, overrides, out, seed)
        value_list = values.split(",")
        click.echo(f"⏳ Ablating {axis} over {value_list} with seeds {list(config.seeds)}")
        path = experiments.ablate(config, axis.lower(), value_list)
        click.echo(f"✅ Wrote {path.absolute()}")


@cli.command()
@click.argument('run_dirs', nargs=-1, required=True, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option(
    '--out',
    type=click.Path(file_okay=False, path_type=Path),
    envvar='GAL_OUT_DIR',
    default=Path("runs"),
    help='Directory for comparison.csv (default: $GAL_OUT_DIR, then runs)'
)
def report(run_dirs: tuple[Path, ...], out: Path):
    """
    Collect run summaries into comparison.csv.

    Each argument is a run directory or a directory searched for runs.

    Examples:
        bsgal report runs/default
    """
    with exit_codes():
        path = experiments.report(list(run_dirs), out)
        click.echo(f"✅ Wrote {path.absolute()}")


@cli.command()
@config_options
@click.option(
    '--generated',
    '-g',
    type=click.IntRange(min=0),
    default=1000,
    help='Number of generated samples to export (default: 1000)'
)
def export_world(
    config_path: Optional[Path],
    overrides: tuple[str, ...],
    out: Optional[Path],
    seed: Optional[int],
    generated: int,
):
    """
    Write the real set, evaluation set and a generated sample as CSV.
    """
    with exit_codes():
        config = resolve_config(config_path, overrides, out, seed)
        path = experiments.export_world(config, generated)
        click.echo(f"💾 World exported to {path.absolute()}")


if __name__ == '__main__':
    cli()
