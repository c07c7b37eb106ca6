from typing import Tuple, Union

from dlove.utils.exceptions import ConfigError
from dlove.utils.models import (CommonSurrogateConfig, ExperimentConfig, FinetuneBudget, TargetConfig,
                                TechniqueProfile, TrainConfig)

MIN_SIDE = 8


def scale_side(side: int, factor: float) -> int:
    return max(MIN_SIDE, int(round(side * factor / 4)) * 4)


def scale_count(count: int, factor: float) -> int:
    return max(1, int(round(count * factor)))


def scale_shape(shape: Tuple[int, int, int], factor: float) -> Tuple[int, int, int]:
    height, width, channels = shape

    return scale_side(height, factor), scale_side(width, factor), channels


def _profile(profile: TechniqueProfile, factor: float) -> TechniqueProfile:
    watermark_size: Union[int, Tuple[int, int, int]] = profile.watermark_size
    if not isinstance(watermark_size, int):
        watermark_size = scale_shape(watermark_size, factor)

    return profile.model_copy(update={'cover_shape': scale_shape(profile.cover_shape, factor),
                                      'watermark_size': watermark_size})


def _train(cfg: TrainConfig, factor: float) -> TrainConfig:
    return cfg.model_copy(update={'epochs': scale_count(cfg.epochs, factor)})


def _budget(budget: FinetuneBudget, factor: float) -> FinetuneBudget:
    return budget.model_copy(update={'epochs': scale_count(budget.epochs, factor),
                                     'num_pairs': scale_count(budget.num_pairs, factor)})


def _target(target: TargetConfig, factor: float) -> TargetConfig:
    return target.model_copy(update={
        'profile': _profile(target.profile, factor),
        'train': _train(target.train, factor),
        'finetune': _budget(target.finetune, factor),
        'harvest_pairs': scale_count(target.harvest_pairs, factor),
        'attack_images': scale_count(target.attack_images, factor),
    })


def _common(common: CommonSurrogateConfig, factor: float) -> CommonSurrogateConfig:
    return common.model_copy(update={'io_shape': scale_shape(common.io_shape, factor),
                                     'finetune': _budget(common.finetune, factor)})


def apply_scale(config: ExperimentConfig, factor: float) -> ExperimentConfig:
    """
    Same experiment at another size: image sides become multiples of 4 (at least 8), dataset counts,
    epochs, pair counts and attack images are scaled and rounded (at least 1). The result has scale 1.
    """
    if factor <= 0:
        raise ConfigError(f"Scale factor must be positive, got {factor}.")

    datasets = {
        name: spec.model_copy(update={'count': scale_count(spec.count, factor)})
        for name, spec in config.datasets.items()
    }
    update = {
        'scale': 1.0,
        'datasets': datasets,
        'targets': [_target(target, factor) for target in config.targets],
        'surrogate_train': None if config.surrogate_train is None else _train(config.surrogate_train, factor),
        'common': None if config.common is None else _common(config.common, factor),
    }

    # model_copy skips validation; a round trip re-checks every derived value
    return ExperimentConfig.model_validate(config.model_copy(update=update).model_dump(mode='json'))
