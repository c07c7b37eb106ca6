import os
import logging
from typing import Optional, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict

from dlove.nets.pipeline import Pipeline, build_pipeline
from dlove.nets.training import TrainHistory
from dlove.utils.exceptions import CheckpointIntegrityError, ArtifactWriteError
from dlove.utils.models import TechniqueProfile, TrainConfig
from dlove.utils.security import tensors_digest, verify_digest

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 'dlove-pipeline'
CHECKPOINT_VERSION = 1

DTYPES = {'float32': torch.float32, 'float64': torch.float64}


class CheckpointMetadata(BaseModel):
    model_config = ConfigDict(frozen=True)

    profile: TechniqueProfile
    train_config: Optional[TrainConfig] = None
    pyramid_seed: int
    history: Optional[TrainHistory] = None
    dtype: str = 'float32'


def _metadata_fields(metadata: CheckpointMetadata) -> dict:
    return {
        'format': CHECKPOINT_FORMAT,
        'version': CHECKPOINT_VERSION,
        'profile': metadata.profile.model_dump_json(),
        'train_config': None if metadata.train_config is None else metadata.train_config.model_dump_json(),
        'pyramid_seed': metadata.pyramid_seed,
        'history': None if metadata.history is None else metadata.history.model_dump_json(),
        'dtype': metadata.dtype,
    }


def save_checkpoint(pipeline: Pipeline, path: Union[str, os.PathLike], train_config: Optional[TrainConfig] = None,
                    history: Optional[TrainHistory] = None) -> None:
    """
    Writes format v1: metadata strings, the state dict and a SHA-256 checksum over both.
    """
    dtype = {value: key for key, value in DTYPES.items()}[pipeline.dtype]
    metadata = CheckpointMetadata(profile=pipeline.profile, train_config=train_config,
                                  pyramid_seed=pipeline.pyramid_seed, history=history, dtype=dtype)
    fields = _metadata_fields(metadata)
    state_dict = {key: value.detach().cpu().clone() for key, value in pipeline.state_dict().items()}

    container = dict(fields, state_dict=state_dict, checksum=tensors_digest(metadata=fields, tensors=state_dict))
    try:
        torch.save(container, path)
    # torch reports a missing parent directory as RuntimeError
    except (OSError, RuntimeError) as error:
        raise ArtifactWriteError(f"Cannot write checkpoint to {path}: {error}")
    logger.debug("Saved checkpoint of '%s' to %s", pipeline.profile.name, path)


def load_checkpoint(path: Union[str, os.PathLike]) -> Tuple[Pipeline, CheckpointMetadata]:
    try:
        container = torch.load(path, map_location='cpu', weights_only=True)
    except FileNotFoundError:
        raise CheckpointIntegrityError(f"Checkpoint {path} does not exist.")
    except Exception as error:
        raise CheckpointIntegrityError(f"Checkpoint {path} is unreadable: {error}")

    if not isinstance(container, dict) or container.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointIntegrityError(f"{path} is not a pipeline checkpoint.")
    if container.get('version') != CHECKPOINT_VERSION:
        raise CheckpointIntegrityError(f"Checkpoint {path} has unsupported version {container.get('version')}.")

    fields = {key: container.get(key) for key in ('format', 'version', 'profile', 'train_config', 'pyramid_seed',
                                                  'history', 'dtype')}
    state_dict = container.get('state_dict') or {}
    if not verify_digest(str(container.get('checksum')), tensors_digest(metadata=fields, tensors=state_dict)):
        raise CheckpointIntegrityError(f"Checksum mismatch in checkpoint {path}.")

    metadata = CheckpointMetadata(
        profile=TechniqueProfile.model_validate_json(fields['profile']),
        train_config=None if fields['train_config'] is None else TrainConfig.model_validate_json(fields['train_config']),
        pyramid_seed=fields['pyramid_seed'],
        history=None if fields['history'] is None else TrainHistory.model_validate_json(fields['history']),
        dtype=fields['dtype'],
    )

    pipeline = build_pipeline(profile=metadata.profile, seed=0, pyramid_seed=metadata.pyramid_seed)
    pipeline = pipeline.to(DTYPES[metadata.dtype])
    pipeline.load_state_dict(state_dict)
    pipeline.eval()

    return pipeline, metadata
