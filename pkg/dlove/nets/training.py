import math
import logging
from typing import Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel
from tqdm import tqdm

from dlove.config import Config
from dlove.data.dataset import Dataset, split_dataset
from dlove.data.image import adapt_batch
from dlove.metrics.quality import psnr_batch
from dlove.nets.noise import noise_batch
from dlove.nets.perceptual import perceptual_distance
from dlove.nets.pipeline import Pipeline
from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import DatasetError, TrainingDivergedError
from dlove.utils.models import LossWeights, NoiseSpec, TrainConfig
from dlove.utils.scripts import derive_seed, make_generator, randint_from

logger = logging.getLogger(__name__)


class EpochRecord(BaseModel):
    epoch: int
    losses: Dict[str, float]
    test_bit_accuracy: Optional[float] = None
    test_psnr: Optional[float] = None


class TrainHistory(BaseModel):
    epochs: List[EpochRecord] = []

    @property
    def final(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None


def compute_loss(pipeline: Pipeline, covers: torch.Tensor, targets: torch.Tensor, weights: LossWeights,
                 noise: Optional[NoiseSpec] = None,
                 generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, Dict[str, torch.Tensor]]:
    """
    Weighted training objective of one batch.

    targets are (B, N) bits for bit pipelines or (B, C, H, W) watermark images. Zero-weight image terms
    and the adversarial term of discriminator-less pipelines are skipped.
    """
    covers = covers.to(pipeline.dtype)
    targets = targets.to(pipeline.dtype)
    watermarked = pipeline.encoder(covers, targets)
    received = watermarked if noise is None else noise_batch(watermarked, noise, generator)
    decoded = pipeline.decoder(received)

    terms: Dict[str, torch.Tensor] = {}
    if weights.image_mse > 0:
        terms['image_mse'] = F.mse_loss(watermarked, covers)
    if weights.perceptual > 0:
        terms['perceptual'] = perceptual_distance(watermarked, covers, pipeline.pyramid).mean()
    if weights.residual_l2 > 0:
        terms['residual_l2'] = (watermarked - covers).pow(2).flatten(1).sum(dim=1).mean()

    if pipeline.profile.watermark_kind == WatermarkKind.bits:
        terms['watermark'] = F.binary_cross_entropy_with_logits(decoded, targets)
    else:
        terms['watermark'] = (F.mse_loss(decoded, targets)
                              + perceptual_distance(decoded, targets, pipeline.watermark_pyramid).mean())

    if pipeline.discriminator is not None and weights.adversarial > 0:
        scores = pipeline.discriminator(watermarked)
        terms['adversarial'] = F.binary_cross_entropy_with_logits(scores, torch.ones_like(scores))

    total = sum(getattr(weights, name) * value for name, value in terms.items())

    return total, terms


def discriminator_step(pipeline: Pipeline, optimizer: torch.optim.Optimizer, covers: torch.Tensor,
                       targets: torch.Tensor) -> float:
    with torch.no_grad():
        watermarked = pipeline.encoder(covers.to(pipeline.dtype), targets.to(pipeline.dtype))

    real = pipeline.discriminator(covers.to(pipeline.dtype))
    fake = pipeline.discriminator(watermarked)
    loss = (F.binary_cross_entropy_with_logits(real, torch.ones_like(real))
            + F.binary_cross_entropy_with_logits(fake, torch.zeros_like(fake)))

    optimizer.zero_grad()
    loss.backward()
    optimizer.step()

    return float(loss)


def sample_targets(pipeline: Pipeline, covers: torch.Tensor, paired: Optional[torch.Tensor],
                   generator: torch.Generator) -> torch.Tensor:
    """Fresh bits per item, or the paired watermark images (rolled covers when none are paired)."""
    profile = pipeline.profile
    if profile.watermark_kind == WatermarkKind.bits:
        return torch.randint(0, 2, (covers.shape[0], profile.bit_count), generator=generator).to(pipeline.dtype)
    if paired is not None:
        return paired.to(pipeline.dtype)

    return adapt_batch(torch.roll(covers, shifts=1, dims=0), profile.watermark_size).to(pipeline.dtype)


def paired_watermarks(data: Dataset) -> Optional[torch.Tensor]:
    marks = [item.watermark for item in data.items]
    if any(mark is None for mark in marks):
        return None

    return torch.stack([mark.as_target() for mark in marks], dim=0)


def evaluate_pipeline(pipeline: Pipeline, data: Dataset, seed: int, batch_size: int = 64) -> Tuple[Optional[float], float]:
    """(bit accuracy, mean PSNR) of noise-free embed/extract with fresh watermarks over a dataset."""
    generator = make_generator(seed)
    covers = data.stack()
    paired = paired_watermarks(data)
    correct, psnrs = 0, []

    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            batch = covers[start:start + batch_size].to(pipeline.dtype)
            pairs = None if paired is None else paired[start:start + batch_size]
            targets = sample_targets(pipeline=pipeline, covers=batch, paired=pairs, generator=generator)
            watermarked = pipeline.encoder(batch, targets)
            psnrs.append(psnr_batch(batch, watermarked))
            if pipeline.profile.watermark_kind == WatermarkKind.bits:
                decoded = (pipeline.decoder(watermarked) > 0).to(targets.dtype)
                correct += int((decoded == targets).sum())

    mean_psnr = float(torch.cat(psnrs).mean())
    if pipeline.profile.watermark_kind != WatermarkKind.bits:
        return None, mean_psnr

    return correct / (len(data) * pipeline.profile.bit_count), mean_psnr


def train_pipeline(pipeline: Pipeline, data: Dataset, cfg: TrainConfig) -> Tuple[Pipeline, TrainHistory]:
    if tuple(data.shape) != tuple(pipeline.profile.cover_shape):
        raise DatasetError(f"Dataset '{data.name}' holds {data.shape} images but '{pipeline.profile.name}' "
                           f"takes {tuple(pipeline.profile.cover_shape)}.")

    if cfg.holdout_fraction > 0 and len(data) >= 2:
        train_data, test_data = split_dataset(dataset=data, test_fraction=cfg.holdout_fraction, seed=cfg.seed)
    else:
        train_data, test_data = data, None

    generator = make_generator(derive_seed(cfg.seed, 'train'))
    covers = train_data.stack().to(pipeline.dtype)
    paired = paired_watermarks(train_data)
    weights = cfg.loss_weights
    noise_layers = pipeline.profile.noise_layers

    optimizer = torch.optim.Adam(list(pipeline.encoder.parameters()) + list(pipeline.decoder.parameters()),
                                 lr=cfg.learning_rate)
    adversarial = pipeline.discriminator is not None and weights.adversarial > 0
    discriminator_optimizer = (torch.optim.Adam(pipeline.discriminator.parameters(), lr=cfg.learning_rate)
                               if adversarial else None)

    history = TrainHistory()
    pipeline.train()
    progress = tqdm(range(cfg.epochs), desc=f"train {pipeline.profile.name}", disable=not Config.PROGRESS)
    for epoch in progress:
        order = torch.randperm(len(train_data), generator=generator)
        sums: Dict[str, float] = {}
        batches = 0

        for start in range(0, len(train_data), cfg.batch_size):
            index = order[start:start + cfg.batch_size]
            batch = covers[index]
            targets = sample_targets(pipeline=pipeline, covers=batch,
                                     paired=None if paired is None else paired[index], generator=generator)
            noise = noise_layers[randint_from(generator, len(noise_layers))] if noise_layers else None

            total, terms = compute_loss(pipeline=pipeline, covers=batch, targets=targets, weights=weights,
                                        noise=noise, generator=generator)
            if not math.isfinite(float(total)):
                raise TrainingDivergedError(f"Training '{pipeline.profile.name}' diverged at epoch {epoch + 1}: "
                                            f"loss terms {({name: float(value) for name, value in terms.items()})}.")

            optimizer.zero_grad()
            total.backward()
            optimizer.step()

            if adversarial:
                sums['discriminator'] = sums.get('discriminator', 0.0) + discriminator_step(
                    pipeline=pipeline, optimizer=discriminator_optimizer, covers=batch, targets=targets)

            sums['total'] = sums.get('total', 0.0) + float(total)
            for name, value in terms.items():
                sums[name] = sums.get(name, 0.0) + float(value)
            batches += 1

        record = EpochRecord(epoch=epoch + 1, losses={name: value / batches for name, value in sums.items()})
        if test_data is not None:
            pipeline.eval()
            record.test_bit_accuracy, record.test_psnr = evaluate_pipeline(
                pipeline=pipeline, data=test_data, seed=derive_seed(cfg.seed, 'evaluate', epoch))
            pipeline.train()
        history.epochs.append(record)
        progress.set_postfix(loss=f"{record.losses['total']:.4f}")
        logger.debug("Epoch %d of '%s': %s", epoch + 1, pipeline.profile.name, record.losses)

    pipeline.eval()
    final = history.final
    logger.info("Trained '%s' for %d epochs: loss %.4f, test bit accuracy %s, test PSNR %s",
                pipeline.profile.name, cfg.epochs, final.losses['total'], final.test_bit_accuracy, final.test_psnr)

    return pipeline, history
