import io
import os
import logging
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image as PILImage, UnidentifiedImageError
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import (ImageReadError, UnsupportedBitDepthError, CorruptImageError, ImageWriteError,
                                    ShapeMismatchError, WatermarkKindError)
from dlove.utils.scripts import make_generator

logger = logging.getLogger(__name__)

EIGHT_BIT_MODES = ('1', 'L', 'LA', 'P', 'RGB', 'RGBA')
WIDE_MODES = ('I', 'I;16', 'I;16B', 'I;16L', 'I;16N', 'F')
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class Image(BaseModel):
    """
    H×W×C tensor of intensities in [0, 1], the carrier for covers, watermarked and attacked images
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pixels: torch.Tensor

    @field_validator('pixels', mode='after')
    def validate_pixels(cls, pixels):
        if pixels.dim() != 3 or pixels.shape[2] not in (1, 3):
            raise ShapeMismatchError(f"Images are [height, width, 1|3] tensors, got shape {tuple(pixels.shape)}.")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ShapeMismatchError(f"Images need positive dimensions, got shape {tuple(pixels.shape)}.")
        if not torch.is_floating_point(pixels):
            raise ShapeMismatchError(f"Image intensities are real numbers, got {pixels.dtype}.")
        if not bool(torch.isfinite(pixels).all()):
            raise ShapeMismatchError("Image intensities must be finite.")
        if float(pixels.min()) < 0.0 or float(pixels.max()) > 1.0:
            raise ShapeMismatchError("Image intensities must lie in [0, 1].")

        return pixels.detach()

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple:
        return tuple(self.pixels.shape)

    def to_batch(self) -> torch.Tensor:
        return self.pixels.permute(2, 0, 1).unsqueeze(0).contiguous()

    @classmethod
    def from_batch(cls, batch: torch.Tensor, index: int = 0) -> "Image":
        return cls(pixels=batch[index].detach().clamp(0.0, 1.0).permute(1, 2, 0).contiguous())

    @classmethod
    def constant(cls, value: float, shape: Sequence[int], dtype: torch.dtype = torch.float32) -> "Image":
        return cls(pixels=torch.full(tuple(shape), float(value), dtype=dtype))


class Watermark(BaseModel):
    """
    Payload embedded by an encoder: a {0,1} bit vector or an image
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: WatermarkKind
    bits: Optional[torch.Tensor] = None
    image: Optional[Image] = None

    @model_validator(mode='after')
    def validate_payload(self):
        if self.kind == WatermarkKind.bits:
            if self.bits is None or self.bits.dim() != 1 or self.bits.numel() < 1:
                raise WatermarkKindError("Bit watermarks carry a non-empty bit vector.")
            if not bool(((self.bits == 0) | (self.bits == 1)).all()):
                raise WatermarkKindError("Bit watermarks contain only 0 and 1.")
        elif self.image is None:
            raise WatermarkKindError("Image watermarks carry an image.")

        return self

    @classmethod
    def from_bits(cls, bits: Union[Sequence[int], torch.Tensor]) -> "Watermark":
        tensor = torch.as_tensor(bits).detach().to(torch.int64).flatten()

        return cls(kind=WatermarkKind.bits, bits=tensor)

    @classmethod
    def from_image(cls, image: Image) -> "Watermark":
        return cls(kind=WatermarkKind.image, image=image)

    @property
    def size(self) -> Union[int, tuple]:
        if self.kind == WatermarkKind.bits:
            return self.bits.numel()

        return self.image.shape

    def as_target(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Loss target: (N,) bit floats or (C, H, W) pixels."""
        if self.kind == WatermarkKind.bits:
            return self.bits.to(dtype)

        return self.image.to_batch()[0].to(dtype)

    def bit_list(self) -> list:
        if self.kind != WatermarkKind.bits:
            raise WatermarkKindError("Image watermarks have no bit list.")

        return [int(bit) for bit in self.bits.tolist()]

    def equals(self, other: "Watermark") -> bool:
        if self.kind != other.kind:
            return False
        if self.kind == WatermarkKind.bits:
            return self.bits.shape == other.bits.shape and bool(torch.equal(self.bits.to(torch.int64),
                                                                           other.bits.to(torch.int64)))

        return self.image.shape == other.image.shape and bool(torch.equal(self.image.pixels, other.image.pixels))


def load_image(path: Union[str, os.PathLike], target_channels: int = 3) -> Image:
    if target_channels not in (1, 3):
        raise ShapeMismatchError(f"target_channels must be 1 or 3, got {target_channels}.")

    try:
        with open(path, 'rb') as file:
            payload = file.read()
    except OSError as error:
        raise ImageReadError(f"Cannot read image file {path}: {error}")

    if len(payload) < 33 or not payload.startswith(PNG_SIGNATURE) or payload[12:16] != b'IHDR':
        raise CorruptImageError(f"{path} is not a PNG stream.")
    bit_depth = payload[24]
    if bit_depth > 8:
        raise UnsupportedBitDepthError(f"{path} stores {bit_depth}-bit samples; only 8-bit PNGs are supported.")

    try:
        picture = PILImage.open(io.BytesIO(payload))
        picture.load()
    except UnidentifiedImageError:
        raise CorruptImageError(f"{path} is not a decodable PNG stream.")
    except (OSError, SyntaxError, ValueError) as error:
        raise CorruptImageError(f"Corrupt PNG stream in {path}: {error}")

    if picture.mode in WIDE_MODES or picture.mode not in EIGHT_BIT_MODES:
        raise UnsupportedBitDepthError(f"{path} decodes to mode {picture.mode}; only 8-bit PNGs are supported.")

    picture = picture.convert('L' if target_channels == 1 else 'RGB')
    array = np.asarray(picture, dtype=np.uint8)

    if array.ndim == 2:
        array = array[:, :, None]
    pixels = torch.from_numpy(array.astype(np.float32) / 255.0)

    return Image(pixels=pixels)


def save_image(image: Image, path: Union[str, os.PathLike]) -> None:
    array = torch.round(image.pixels.detach().cpu().double() * 255.0).clamp(0, 255).to(torch.uint8).numpy()
    picture = PILImage.fromarray(array[:, :, 0], mode='L') if image.channels == 1 else PILImage.fromarray(array, 'RGB')

    try:
        picture.save(path, format='PNG')
    except OSError as error:
        raise ImageWriteError(f"Cannot write image to {path}: {error}")


def quantize(image: Image) -> Image:
    """In-memory 8-bit round trip, the same quantization save_image applies."""
    pixels = torch.round(image.pixels * 255.0) / 255.0

    return Image(pixels=pixels.to(image.pixels.dtype))


def sample_bit_watermark(n: int, seed: int) -> Watermark:
    if n < 1:
        raise WatermarkKindError(f"Bit watermarks need at least one bit, got n={n}.")

    bits = torch.randint(0, 2, (n,), generator=make_generator(seed), dtype=torch.int64)

    return Watermark.from_bits(bits)


def resize_batch(batch: torch.Tensor, out_height: int, out_width: int) -> torch.Tensor:
    if out_height < 1 or out_width < 1:
        raise ShapeMismatchError(f"Output dimensions must be positive, got {out_height}×{out_width}.")
    if batch.shape[-2:] == (out_height, out_width):
        return batch

    resized = F.interpolate(batch, size=(out_height, out_width), mode='bilinear', align_corners=False)

    return resized.clamp(0.0, 1.0)


def resize(image: Image, out_height: int, out_width: int) -> Image:
    if out_height < 1 or out_width < 1:
        raise ShapeMismatchError(f"Output dimensions must be positive, got {out_height}×{out_width}.")
    if (image.height, image.width) == (out_height, out_width):
        return image

    return Image.from_batch(resize_batch(image.to_batch(), out_height, out_width))


def convert_channels_batch(batch: torch.Tensor, channels: int) -> torch.Tensor:
    current = batch.shape[1]
    if current == channels:
        return batch
    if channels == 3:
        return batch.expand(-1, 3, -1, -1).contiguous()

    return batch.mean(dim=1, keepdim=True)


def convert_channels(image: Image, channels: int) -> Image:
    if channels not in (1, 3):
        raise ShapeMismatchError(f"Images carry 1 or 3 channels, got {channels}.")

    return Image.from_batch(convert_channels_batch(image.to_batch(), channels))


def adapt_batch(batch: torch.Tensor, shape: Sequence[int]) -> torch.Tensor:
    """Resolution and channel adapter between a target's and a surrogate's input shapes."""
    height, width, channels = shape
    batch = resize_batch(batch, height, width)

    return convert_channels_batch(batch, channels)


def adapt(image: Image, shape: Sequence[int]) -> Image:
    if image.shape == tuple(shape):
        return image

    return Image.from_batch(adapt_batch(image.to_batch(), shape))
