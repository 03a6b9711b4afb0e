import functools
import logging
import os
import sys

import click

from countcast.base import CONFIG_FILE
from countcast.client import initialize
from countcast.errors import ComputationError, InputError
from countcast.pipeline import Pipeline

logger = logging.getLogger(__name__)

EXIT_COMPUTATION = 1
EXIT_INPUT = 2


def _run(fn):
    """map package errors onto the exit code contract: 2 bad input or config, 1 computation"""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (InputError, FileNotFoundError) as e:
            click.echo('error: %s' % e, err=True)
            sys.exit(EXIT_INPUT)
        except ComputationError as e:
            click.echo('computation failed: %s' % e, err=True)
            sys.exit(EXIT_COMPUTATION)

    return wrapper


def _pipeline(config, out, seed):
    if config is None:
        config = CONFIG_FILE if os.path.exists(CONFIG_FILE) else {}
    return Pipeline(config, out=out, seed=seed)


def run_options(fn):
    fn = click.option('--seed', type=int, default=None, help='override train.seed and synth.seed')(fn)
    fn = click.option('--out', 'out', type=click.Path(file_okay=False), default=None,
                      help='output directory (default: paths.out of the config)')(fn)
    fn = click.option('--config', 'config', type=click.Path(dir_okay=False), default=None,
                      help='run config (default: ~/.config/countcast/config.yml)')(fn)
    return fn


@click.group()
@click.option('-v', '--verbose', is_flag=True, help='debug logging')
def cli(verbose):
    """Forecasting toolkit for sparse hierarchical event-count panels"""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, stream=sys.stderr,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


@cli.command()
@click.argument('path', required=False, type=click.Path(dir_okay=False))
@click.option('--overwrite', is_flag=True, help='replace an existing file')
def init(path, overwrite):
    """Write a default run config (default: ~/.config/countcast/config.yml)"""
    initialize(path, overwrite=overwrite)


@cli.command()
@run_options
@_run
def synth(config, out, seed):
    """Generate the seeded synthetic benchmark"""
    for path in _pipeline(config, out, seed).synth():
        click.echo(path)


@cli.command()
@run_options
@_run
def ingest(config, out, seed):
    """Validate the events file and write the rolled-up monthly count panel"""
    click.echo(_pipeline(config, out, seed).ingest())


@cli.command()
@run_options
@_run
def sparsity(config, out, seed):
    """Share of zero cells per level and interval"""
    click.echo(_pipeline(config, out, seed).sparsity())


@cli.command('fill-eval')
@run_options
@_run
def fill_eval(config, out, seed):
    """Holdout comparison of the gap-fill methods"""
    click.echo(_pipeline(config, out, seed).fill_eval())


@cli.command()
@run_options
@click.option('--plot', is_flag=True, help='also write the prediction and window RMSE charts (SVG)')
@_run
def backtest(config, out, seed, plot):
    """Run every configured (model, regime, covariate set) backtest"""
    pipeline = _pipeline(config, out, seed)
    reports = pipeline.backtest(plot=plot)
    click.echo(str(reports))
    click.echo('summary: %s' % os.path.join(pipeline.out_dir, 'summary.csv'))


@cli.command()
@run_options
@click.argument('reports', nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option('--label', 'labels', multiple=True, help='label per report, in order (default: report labels)')
@_run
def compare(config, out, seed, reports, labels):
    """Friedman and Nemenyi tests over backtest reports"""
    for path in _pipeline(config, out, seed).compare(reports, labels):
        click.echo(path)


@cli.command()
@run_options
@_run
def forecast(config, out, seed):
    """Fit on the full history and write the next horizon steps of every region"""
    click.echo(_pipeline(config, out, seed).forecast())
