from typing import Callable, Optional

import click

from dlove.store.functions import load_config
from dlove.utils.exceptions import ConfigError
from dlove.utils.models import ExperimentConfig

OPTIONS = [
    click.option('--config', 'config_path', type=click.Path(dir_okay=False), default=None,
                 help="Experiment config (JSON)."),
    click.option('--seed', type=click.IntRange(min=0), default=None, help="Global seed."),
    click.option('--out', type=click.Path(file_okay=False), default=None, help="Output directory."),
    click.option('--scale', type=float, default=None, help="Scale factor applied to sizes, counts and epochs."),
]


def experiment_options(command: Callable) -> Callable:
    """--config, --seed, --out and --scale, shared by every sub-command."""
    for option in reversed(OPTIONS):
        command = option(command)

    return command


def get_config(config_path: Optional[str], seed: Optional[int], out: Optional[str],
               scale: Optional[float]) -> ExperimentConfig:
    if config_path is None:
        raise ConfigError("--config is required.")

    config = load_config(path=config_path)
    update = {}
    if seed is not None:
        update['seed'] = seed
    if out is not None:
        update['output_dir'] = out
    if scale is not None:
        update['scale'] = scale
    if not update:
        return config

    return ExperimentConfig.model_validate({**config.model_dump(mode='json'), **update})
