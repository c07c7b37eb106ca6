import copy
import logging
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel
from tqdm import tqdm

from dlove.config import Config
from dlove.data.dataset import Dataset
from dlove.nets.perceptual import perceptual_distance
from dlove.nets.pipeline import Pipeline, build_pipeline, check_image, check_watermark, message_batch
from dlove.nets.training import TrainHistory, train_pipeline
from dlove.surrogate.pairs import AttackPair, pairs_dataset
from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import InsufficientPairsError
from dlove.utils.models import CommonSurrogateSpec, FinetuneBudget, NoiseSpec, TechniqueProfile, TrainConfig
from dlove.utils.scripts import derive_seed, make_generator

logger = logging.getLogger(__name__)

COMMON_SURROGATE = 'common-surrogate'


class FinetuneEpoch(BaseModel):
    epoch: int
    loss: float
    heldout_bit_accuracy: Optional[float] = None
    per_source: Dict[str, float] = {}


class FinetuneHistory(BaseModel):
    epochs: List[FinetuneEpoch] = []

    @property
    def final(self) -> Optional[FinetuneEpoch]:
        return self.epochs[-1] if self.epochs else None


def surrogate_profile(target: TechniqueProfile) -> TechniqueProfile:
    """The attacker's stand-in: same shapes and payload, its own weights, no discriminator."""
    return TechniqueProfile(
        name=f"{target.name}-surrogate",
        cover_shape=target.cover_shape,
        watermark_kind=target.watermark_kind,
        watermark_size=target.watermark_size,
        has_discriminator=False,
        noise_layers=target.noise_layers,
        screen_shoot_robust=target.screen_shoot_robust,
        architecture=target.architecture,
    )


def train_surrogate(profile: TechniqueProfile, data: Dataset, cfg: TrainConfig,
                    pyramid_seed: int = 0) -> Tuple[Pipeline, TrainHistory]:
    weights = cfg.loss_weights.model_copy(update={'adversarial': 0.0})
    cfg = cfg.model_copy(update={'loss_weights': weights})
    pipeline = build_pipeline(profile=profile, seed=cfg.seed, pyramid_seed=pyramid_seed)

    return train_pipeline(pipeline=pipeline, data=data, cfg=cfg)


def common_profile(spec: CommonSurrogateSpec) -> TechniqueProfile:
    noise: List[NoiseSpec] = []
    for member in spec.member_targets:
        noise.extend(layer for layer in member.noise_layers if layer not in noise)

    return TechniqueProfile(
        name=COMMON_SURROGATE,
        cover_shape=spec.io_shape,
        watermark_kind=WatermarkKind.bits,
        watermark_size=spec.wm_bits,
        noise_layers=noise,
        architecture=spec.member_targets[0].architecture,
    )


def build_common_surrogate(spec: CommonSurrogateSpec, data: Dataset, cfg: TrainConfig,
                           pyramid_seed: int = 0) -> Tuple[Pipeline, TrainHistory]:
    return train_surrogate(profile=common_profile(spec=spec), data=data, cfg=cfg, pyramid_seed=pyramid_seed)


def _pair_tensors(pipeline: Pipeline, pairs: List[AttackPair]) -> Tuple[torch.Tensor, torch.Tensor]:
    dataset = pairs_dataset(pairs=pairs, name=pipeline.profile.name)
    images = dataset.stack().to(pipeline.dtype)
    targets = message_batch([item.watermark for item in dataset.items], dtype=pipeline.dtype)

    return images, targets


def decoder_loss(pipeline: Pipeline, images: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    decoded = pipeline.decoder(images)
    if pipeline.profile.watermark_kind == WatermarkKind.bits:
        return F.binary_cross_entropy_with_logits(decoded, targets)

    return F.mse_loss(decoded, targets) + perceptual_distance(decoded, targets, pipeline.watermark_pyramid).mean()


def _mean_loss(pipeline: Pipeline, images: torch.Tensor, targets: torch.Tensor, batch_size: int) -> float:
    total = 0.0
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            chunk = images[start:start + batch_size]
            total += float(decoder_loss(pipeline, chunk, targets[start:start + batch_size])) * chunk.shape[0]

    return total / images.shape[0]


def _heldout_accuracy(pipeline: Pipeline, pairs: List[AttackPair]) -> Tuple[Optional[float], Dict[str, float]]:
    if not pairs or pipeline.profile.watermark_kind != WatermarkKind.bits:
        return None, {}

    images, targets = _pair_tensors(pipeline, pairs)
    with torch.no_grad():
        hits = ((pipeline.decoder(images) > 0).to(targets.dtype) == targets).to(torch.float64).mean(dim=1)

    per_source: Dict[str, List[float]] = {}
    for pair, hit in zip(pairs, hits.tolist()):
        per_source.setdefault(pair.source, []).append(hit)

    return float(hits.mean()), {source: sum(values) / len(values) for source, values in per_source.items()}


def finetune_decoder(surrogate: Pipeline, pairs: List[AttackPair],
                     budget: FinetuneBudget) -> Tuple[Pipeline, FinetuneHistory]:
    """
    Adapts a copy of the surrogate's decoder to harvested target pairs; the encoder stays frozen.

    Epoch 0 of the history is the loss before any update; every loss is evaluated on the same training
    pairs with the decoder in eval mode.
    """
    if not pairs:
        raise InsufficientPairsError("Fine-tuning needs at least one harvested pair.")
    pairs = pairs[:budget.num_pairs]
    for pair in pairs:
        check_image(pipeline=surrogate, image=pair.watermarked)
        check_watermark(profile=surrogate.profile, watermark=pair.wm)

    model = copy.deepcopy(surrogate)
    model.encoder.requires_grad_(False)
    model.eval()

    generator = make_generator(derive_seed(budget.seed, 'finetune'))
    order = torch.randperm(len(pairs), generator=generator).tolist()
    heldout_count = 0
    if budget.holdout_fraction > 0 and len(pairs) >= 2:
        heldout_count = min(len(pairs) - 1, max(1, int(round(len(pairs) * budget.holdout_fraction))))
    heldout = [pairs[index] for index in order[:heldout_count]]
    training = [pairs[index] for index in order[heldout_count:]]

    images, targets = _pair_tensors(model, training)
    optimizer = torch.optim.Adam(model.decoder.parameters(), lr=budget.learning_rate)

    history = FinetuneHistory()
    accuracy, per_source = _heldout_accuracy(model, heldout)
    history.epochs.append(FinetuneEpoch(epoch=0, loss=_mean_loss(model, images, targets, budget.batch_size),
                                        heldout_bit_accuracy=accuracy, per_source=per_source))

    progress = tqdm(range(budget.epochs), desc=f"finetune {model.profile.name}", disable=not Config.PROGRESS)
    for epoch in progress:
        permutation = torch.randperm(len(training), generator=generator)
        for start in range(0, len(training), budget.batch_size):
            index = permutation[start:start + budget.batch_size]
            loss = decoder_loss(model, images[index], targets[index])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()

        accuracy, per_source = _heldout_accuracy(model, heldout)
        record = FinetuneEpoch(epoch=epoch + 1, loss=_mean_loss(model, images, targets, budget.batch_size),
                               heldout_bit_accuracy=accuracy, per_source=per_source)
        history.epochs.append(record)
        progress.set_postfix(loss=f"{record.loss:.4f}")

    logger.info("Fine-tuned '%s' on %d pairs for %d epochs: loss %.4f -> %.4f, held-out accuracy %s",
                model.profile.name, len(training), budget.epochs, history.epochs[0].loss, history.final.loss,
                history.final.heldout_bit_accuracy)

    return model, history


def finetune_common(surrogate: Pipeline, pooled: List[AttackPair],
                    budget: FinetuneBudget) -> Tuple[Pipeline, FinetuneHistory]:
    """Fine-tunes on every pooled pair; budget.num_pairs counts pairs per member."""
    if not pooled:
        raise InsufficientPairsError("The pooled pair set is empty.")

    pooled_budget = budget.model_copy(update={'num_pairs': len(pooled)})

    return finetune_decoder(surrogate=surrogate, pairs=pooled, budget=pooled_budget)
