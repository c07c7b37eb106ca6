"""
Content-addressed stage store.

A stage's key hashes its name, the slice of the config it reads and the keys of the stages it reads
from, so two runs that agree on those share the stage's outputs on disk.
"""
import os
import logging
from typing import Any, Callable, List, Mapping, Optional, Sequence, Union

from pydantic import BaseModel

from dlove.store.functions import complete_stage, get_stage_marker, prepare_stage, stage_dir
from dlove.utils.exceptions import ConfigError, DloveException, StageError
from dlove.utils.models import ExperimentConfig
from dlove.utils.scripts import derive_seed
from dlove.utils.security import digest

logger = logging.getLogger(__name__)

KEY_LENGTH = 16

DATASET = 'dataset'
TRAIN_TARGET = 'train-target'
ATTACK_SET = 'attack-set'
TRAIN_SURROGATE = 'train-surrogate'
HARVEST = 'harvest'
FINETUNE = 'finetune'
ATTACK = 'attack'
EVALUATE = 'evaluate'
REPORT = 'report'

# order in which `until` cuts the graph
STAGES = [DATASET, TRAIN_TARGET, TRAIN_SURROGATE, HARVEST, FINETUNE, ATTACK_SET, ATTACK, EVALUATE, REPORT]

BuildFn = Callable[[str], List[str]]


def config_hash(config: ExperimentConfig) -> str:
    return digest(config.model_dump(mode='json', exclude={'output_dir'}))


def _plain(value: Any) -> Any:
    if isinstance(value, BaseModel):
        return value.model_dump(mode='json')
    if isinstance(value, Mapping):
        return {str(key): _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]

    return value


def stage_key(stage: str, config_slice: Mapping[str, Any], upstream: Sequence[str] = ()) -> str:
    return digest({'stage': stage, 'config': _plain(config_slice), 'upstream': list(upstream)})[:KEY_LENGTH]


def stage_seed(seed: int, stage: str, *names: Union[str, int]) -> int:
    return derive_seed(seed, stage, *names)


def check_until(until: Optional[str], graph: Sequence[str]) -> None:
    if until is None:
        return
    if until not in graph:
        raise ConfigError(f"Stage '{until}' is not part of this mode's graph ({', '.join(graph)}).")


def reaches(until: Optional[str], stage: str) -> bool:
    """Whether a graph cut at `until` still runs `stage`."""
    return until is None or STAGES.index(stage) <= STAGES.index(until)


def run_stage(out: str, stage: str, key: str, build: BuildFn, label: str = '') -> str:
    """
    Runs `build` in a fresh stage directory unless a matching marker says it already ran.

    Domain failures are re-raised as StageError naming the stage; configuration errors keep exit code 1.
    The directory of a failed attempt is left in place and cleared by the next attempt.
    """
    directory = stage_dir(out, stage, key)
    name = f"{stage} {label}".strip()
    if get_stage_marker(out, stage, key) is not None:
        logger.info("Skipping stage '%s' (%s): outputs are up to date", name, key)
        return directory

    logger.info("Running stage '%s' (%s)", name, key)
    prepare_stage(out, stage, key)
    try:
        artifacts = build(directory)
    except (ConfigError, StageError):
        raise
    except DloveException as error:
        raise StageError(stage=name, detail=error.detail)

    for artifact in artifacts:
        if not os.path.exists(os.path.join(directory, artifact)):
            raise StageError(stage=name, detail=f"declared artifact {artifact} was not written")
    complete_stage(out, stage, key, artifacts)
    logger.info("Finished stage '%s'", name)

    return directory
