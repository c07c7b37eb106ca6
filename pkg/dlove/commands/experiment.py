from typing import Optional

import click

from dlove.commands.options import experiment_options, get_config
from dlove.harness.runner import load_manifest, output_dir, report, run
from dlove.harness.sweep import sweep
from dlove.utils.enums import ReportFormat, SweepAxis
from dlove.utils.exceptions import ConfigError

experiment_commands = click.Group(name='experiment')


@experiment_commands.command('run', help="Run the whole stage graph of the config's mode.")
@experiment_options
def run_experiment(config_path: Optional[str], seed: Optional[int], out: Optional[str], scale: Optional[float]):
    manifest = run(config=get_config(config_path=config_path, seed=seed, out=out, scale=scale))

    click.echo(manifest.artifacts.get('report', ''))


@experiment_commands.command('sweep', help="Rerun the experiment over several values of one knob.")
@experiment_options
@click.option('--axis', type=click.Choice([axis.value for axis in SweepAxis]), required=True)
@click.option('--values', 'values', required=True, help="Comma-separated values, e.g. 20,40,60.")
def sweep_experiment(config_path: Optional[str], seed: Optional[int], out: Optional[str], scale: Optional[float],
                     axis: str, values: str):
    try:
        points = [float(value) for value in values.split(',') if value.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got '{values}'.")

    manifest = sweep(config=get_config(config_path=config_path, seed=seed, out=out, scale=scale),
                     axis=SweepAxis(axis), values=points)

    click.echo(manifest.artifacts['sweep'])


@experiment_commands.command('report', help="Render the results of a finished run.")
@experiment_options
@click.option('--format', 'report_format', type=click.Choice([value.value for value in ReportFormat]),
              default=ReportFormat.csv.value, show_default=True)
def report_experiment(config_path: Optional[str], seed: Optional[int], out: Optional[str], scale: Optional[float],
                      report_format: str):
    if out is None:
        if config_path is None:
            raise ConfigError("report needs --out or --config to find the run.")
        out = output_dir(get_config(config_path=config_path, seed=seed, out=None, scale=scale))

    click.echo(report(manifest=load_manifest(out=out), report_format=ReportFormat(report_format)))
