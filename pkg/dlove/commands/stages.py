from typing import Optional

import click

from dlove.commands.options import experiment_options, get_config
from dlove.harness.runner import run
from dlove.harness.stages import ATTACK, EVALUATE, FINETUNE, HARVEST, TRAIN_SURROGATE, TRAIN_TARGET

stage_commands = click.Group(name='stages')


def _run_until(stage: str, config_path: Optional[str], seed: Optional[int], out: Optional[str],
               scale: Optional[float]) -> None:
    manifest = run(config=get_config(config_path=config_path, seed=seed, out=out, scale=scale), until=stage)

    for name, path in sorted(manifest.artifacts.items()):
        click.echo(f"{name}\t{path}")


def _stage_command(stage: str, description: str) -> click.Command:
    @experiment_options
    def command(config_path: Optional[str], seed: Optional[int], out: Optional[str], scale: Optional[float]):
        _run_until(stage=stage, config_path=config_path, seed=seed, out=out, scale=scale)

    return click.command(name=stage, help=description)(command)


for _stage, _description in [
    (TRAIN_TARGET, "Train the toy target pipelines."),
    (TRAIN_SURROGATE, "Train the attacker's surrogate pipelines."),
    (HARVEST, "Harvest watermarked pairs from the targets."),
    (FINETUNE, "Fine-tune the surrogate decoders on harvested pairs."),
    (ATTACK, "Craft and verify the overwriting attacks."),
    (EVALUATE, "Aggregate attack results into the evaluation matrix."),
]:
    stage_commands.add_command(_stage_command(stage=_stage, description=_description))
