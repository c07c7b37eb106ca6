import logging
from typing import List, Optional, Sequence

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, model_validator

from dlove.data.image import Image, Watermark
from dlove.nets.decoder import BitDecoder, ImageDecoder, Discriminator
from dlove.nets.encoder import UNetEncoder
from dlove.nets.perceptual import FeaturePyramid, pyramid_for
from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import InvalidProfileError, ShapeMismatchError, WatermarkKindError
from dlove.utils.models import TechniqueProfile
from dlove.utils.scripts import seeded, derive_seed

logger = logging.getLogger(__name__)


class Pipeline(nn.Module):
    """
    Encoder, decoder and optional discriminator built for one TechniqueProfile.
    """

    def __init__(self, profile: TechniqueProfile, encoder: UNetEncoder, decoder: nn.Module,
                 discriminator: Optional[Discriminator] = None, pyramid_seed: int = 0):
        super().__init__()
        self.profile = profile
        self.encoder = encoder
        self.decoder = decoder
        self.discriminator = discriminator
        self.pyramid_seed = pyramid_seed

    @property
    def dtype(self) -> torch.dtype:
        return next(self.encoder.parameters()).dtype

    @property
    def pyramid(self) -> FeaturePyramid:
        return pyramid_for(seed=self.pyramid_seed, channels=self.profile.cover_shape[2], dtype=self.dtype)

    @property
    def watermark_pyramid(self) -> FeaturePyramid:
        return pyramid_for(seed=self.pyramid_seed, channels=self.profile.watermark_size[2], dtype=self.dtype)

    def encode_batch(self, covers: torch.Tensor, messages: torch.Tensor) -> torch.Tensor:
        return self.encoder(covers.to(self.dtype), messages.to(self.dtype))

    def decode_batch(self, images: torch.Tensor) -> torch.Tensor:
        return self.decoder(images.to(self.dtype))


class WatermarkEstimate(BaseModel):
    """
    Raw decoder output: N logits for bit watermarks, an H×W×C array for image watermarks
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: WatermarkKind
    logits: torch.Tensor

    @model_validator(mode='after')
    def validate_logits(self):
        expected = 1 if self.kind == WatermarkKind.bits else 3
        if self.logits.dim() != expected:
            raise ShapeMismatchError(f"'{self.kind.value}' estimates are {expected}-D, got {tuple(self.logits.shape)}.")

        return self


def check_profile(profile: TechniqueProfile) -> None:
    height, width, _ = profile.cover_shape
    if height % 4 or width % 4:
        raise InvalidProfileError(f"Profile '{profile.name}': cover sides must be divisible by 4, "
                                  f"got {profile.cover_shape}.")
    if profile.watermark_kind == WatermarkKind.image and tuple(profile.watermark_size[:2]) != (height, width):
        raise InvalidProfileError(f"Profile '{profile.name}': watermark images must share the cover's height and "
                                  f"width, got {profile.watermark_size} for cover {profile.cover_shape}.")


def build_pipeline(profile: TechniqueProfile, seed: int, pyramid_seed: int = 0,
                   discriminator_seed: Optional[int] = None) -> Pipeline:
    check_profile(profile=profile)

    with seeded(derive_seed(seed, 'encoder')):
        encoder = UNetEncoder(profile)
    with seeded(derive_seed(seed, 'decoder')):
        decoder = BitDecoder(profile) if profile.watermark_kind == WatermarkKind.bits else ImageDecoder(profile)

    discriminator = None
    if profile.has_discriminator:
        with seeded(derive_seed(seed if discriminator_seed is None else discriminator_seed, 'discriminator')):
            discriminator = Discriminator(profile)

    pipeline = Pipeline(profile=profile, encoder=encoder, decoder=decoder, discriminator=discriminator,
                        pyramid_seed=pyramid_seed)
    logger.debug("Built pipeline '%s' with %d parameters", profile.name,
                 sum(parameter.numel() for parameter in pipeline.parameters()))

    return pipeline


def check_image(pipeline: Pipeline, image: Image) -> None:
    if image.shape != tuple(pipeline.profile.cover_shape):
        raise ShapeMismatchError(f"Pipeline '{pipeline.profile.name}' takes {tuple(pipeline.profile.cover_shape)} "
                                 f"images, got {image.shape}.")


def check_watermark(profile: TechniqueProfile, watermark: Watermark) -> None:
    if watermark.kind != profile.watermark_kind:
        raise WatermarkKindError(f"Pipeline '{profile.name}' carries '{profile.watermark_kind.value}' watermarks, "
                                 f"got '{watermark.kind.value}'.")
    expected = profile.watermark_size if watermark.kind == WatermarkKind.bits else tuple(profile.watermark_size)
    if watermark.size != expected:
        raise ShapeMismatchError(f"Pipeline '{profile.name}' carries watermarks of size {expected}, "
                                 f"got {watermark.size}.")


def message_batch(watermarks: Sequence[Watermark], dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, N) bit floats or (B, C, H, W) watermark images."""
    return torch.stack([watermark.as_target(dtype=dtype) for watermark in watermarks], dim=0)


def embed(pipeline: Pipeline, cover: Image, wm: Watermark) -> Image:
    check_image(pipeline=pipeline, image=cover)
    check_watermark(profile=pipeline.profile, watermark=wm)

    with torch.no_grad():
        watermarked = pipeline.encode_batch(cover.to_batch(), message_batch([wm], dtype=pipeline.dtype))

    return Image.from_batch(watermarked.to(cover.pixels.dtype))


def embed_many(pipeline: Pipeline, covers: List[Image], watermarks: List[Watermark],
               batch_size: int = 64) -> List[Image]:
    results = []
    for start in range(0, len(covers), batch_size):
        chunk = covers[start:start + batch_size]
        marks = watermarks[start:start + batch_size]
        for cover, watermark in zip(chunk, marks):
            check_image(pipeline=pipeline, image=cover)
            check_watermark(profile=pipeline.profile, watermark=watermark)
        with torch.no_grad():
            batch = torch.cat([cover.to_batch() for cover in chunk], dim=0)
            watermarked = pipeline.encode_batch(batch, message_batch(marks, dtype=pipeline.dtype))
        results.extend(Image.from_batch(watermarked, index) for index in range(len(chunk)))

    return results


def extract(pipeline: Pipeline, image: Image) -> WatermarkEstimate:
    check_image(pipeline=pipeline, image=image)

    with torch.no_grad():
        output = pipeline.decode_batch(image.to_batch())[0]

    if pipeline.profile.watermark_kind == WatermarkKind.image:
        output = output.permute(1, 2, 0).contiguous()

    return WatermarkEstimate(kind=pipeline.profile.watermark_kind, logits=output)


def decode_bits(estimate: WatermarkEstimate) -> Watermark:
    if estimate.kind != WatermarkKind.bits:
        raise WatermarkKindError("decode_bits needs a bit-string estimate.")

    # strict: a logit of exactly 0 decodes to 0
    return Watermark.from_bits((estimate.logits > 0).to(torch.int64))


def decode_image(estimate: WatermarkEstimate) -> Watermark:
    if estimate.kind != WatermarkKind.image:
        raise WatermarkKindError("decode_image needs an image estimate.")

    return Watermark.from_image(Image(pixels=estimate.logits.detach().clamp(0.0, 1.0)))


def decode(pipeline: Pipeline, image: Image) -> Watermark:
    estimate = extract(pipeline=pipeline, image=image)
    if estimate.kind == WatermarkKind.bits:
        return decode_bits(estimate=estimate)

    return decode_image(estimate=estimate)
