import os
import math
import logging
from typing import List, Optional, Tuple, Union

import torch
from pydantic import BaseModel, ConfigDict

from dlove.data.dataset import Dataset, DatasetItem, synthesize_image
from dlove.data.image import Image, Watermark, adapt, load_image, sample_bit_watermark, save_image
from dlove.nets.pipeline import Pipeline, embed_many
from dlove.utils.enums import PaddingPolicy, Split, WatermarkKind
from dlove.utils.exceptions import (ArtifactWriteError, ConfigError, InsufficientPairsError,
                                    WatermarkKindError)
from dlove.utils.models import CommonSurrogateSpec, SyntheticSpec, TechniqueProfile
from dlove.utils.scripts import derive_seed, make_generator

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'pairs.json'
MANIFEST_VERSION = 1


class AttackPair(BaseModel):
    """
    Watermarked image harvested from a target together with the watermark it carries
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    watermarked: Image
    wm: Watermark
    source: str = ''


def pairs_dataset(pairs: List[AttackPair], name: str) -> Dataset:
    return Dataset(name=name, items=[DatasetItem(item_id=f"{name}-{index:06d}", image=pair.watermarked, watermark=pair.wm)
                                          for index, pair in enumerate(pairs)],
                   split=Split.attack_pairs)


class BitMapping(BaseModel):
    """
    How a member's native watermark maps onto the shared surrogate's capped one: the first `window` bits
    of both agree, surrogate bits past the member's native count are zero padding.
    """

    model_config = ConfigDict(frozen=True)

    member: str
    native_bits: int
    surrogate_bits: int
    window: int


def harvest_pairs(target: Pipeline, covers: Dataset, n: int, seed: int,
                  active_bits: Optional[int] = None) -> List[AttackPair]:
    if n < 1:
        raise InsufficientPairsError(f"Harvesting needs at least one pair, got n={n}.")
    if n > len(covers):
        raise InsufficientPairsError(f"Requested {n} pairs but only {len(covers)} covers are available.")

    profile = target.profile
    watermarks = []
    for index in range(n):
        if profile.watermark_kind == WatermarkKind.bits:
            watermark = sample_bit_watermark(n=profile.bit_count, seed=derive_seed(seed, index))
            if active_bits is not None and active_bits < profile.bit_count:
                bits = watermark.bits.clone()
                bits[active_bits:] = 0
                watermark = Watermark.from_bits(bits)
        else:
            picture = synthesize_image(spec=SyntheticSpec(), shape=profile.watermark_size,
                                       generator=make_generator(derive_seed(seed, index)))
            watermark = Watermark.from_image(picture)
        watermarks.append(watermark)

    images = embed_many(pipeline=target, covers=covers.images()[:n], watermarks=watermarks)
    logger.info("Harvested %d pairs from '%s'", n, profile.name)

    return [AttackPair(watermarked=image, wm=watermark, source=profile.name)
            for image, watermark in zip(images, watermarks)]


def bit_mapping(spec: CommonSurrogateSpec, member: TechniqueProfile) -> BitMapping:
    native = member.bit_count
    if native < spec.wm_bits and spec.padding_policy == PaddingPolicy.reject:
        raise ConfigError(f"Member '{member.name}' has {native} bits < {spec.wm_bits} and padding is rejected.")

    return BitMapping(member=member.name, native_bits=native, surrogate_bits=spec.wm_bits,
                      window=min(native, spec.wm_bits))


def to_surrogate_bits(bits: torch.Tensor, mapping: BitMapping) -> torch.Tensor:
    capped = torch.zeros(mapping.surrogate_bits, dtype=torch.int64)
    capped[:mapping.window] = bits[:mapping.window]

    return capped


def to_native_bits(bits: torch.Tensor, mapping: BitMapping) -> torch.Tensor:
    native = torch.zeros(mapping.native_bits, dtype=torch.int64)
    native[:mapping.window] = bits[:mapping.window]

    return native


def cap_pairs(pairs: List[AttackPair], spec: CommonSurrogateSpec,
              member: TechniqueProfile) -> Tuple[List[AttackPair], BitMapping]:
    """Pairs adapted to the shared surrogate's io shape with watermarks capped or padded to wm_bits."""
    if member.watermark_kind != WatermarkKind.bits:
        raise WatermarkKindError(f"Member '{member.name}' uses image watermarks.")
    mapping = bit_mapping(spec=spec, member=member)

    capped = [
        AttackPair(watermarked=adapt(image=pair.watermarked, shape=spec.io_shape),
                   wm=Watermark.from_bits(to_surrogate_bits(pair.wm.bits, mapping)), source=pair.source)
        for pair in pairs
    ]

    return capped, mapping


def bits_to_hex(bits: List[int]) -> str:
    value = int(''.join(str(bit) for bit in bits), 2)

    return format(value, f"0{math.ceil(len(bits) / 4)}x")


def hex_to_bits(payload: str, count: int) -> List[int]:
    value = int(payload, 16)

    return [(value >> (count - 1 - index)) & 1 for index in range(count)]


class PairEntry(BaseModel):
    image: str
    channels: int
    source: str = ''
    bits: Optional[str] = None
    bit_count: Optional[int] = None
    watermark_image: Optional[str] = None
    watermark_channels: Optional[int] = None


class PairManifest(BaseModel):
    version: int = MANIFEST_VERSION
    pairs: List[PairEntry]


def save_pairs(pairs: List[AttackPair], directory: Union[str, os.PathLike]) -> str:
    """PNG files plus a pairs.json manifest; bit watermarks are stored as MSB-first hex with their bit count."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for index, pair in enumerate(pairs):
        name = f"pair-{index:06d}.png"
        save_image(image=pair.watermarked, path=os.path.join(directory, name))
        entry = PairEntry(image=name, channels=pair.watermarked.channels, source=pair.source)
        if pair.wm.kind == WatermarkKind.bits:
            entry.bits = bits_to_hex(pair.wm.bit_list())
            entry.bit_count = pair.wm.size
        else:
            entry.watermark_image = f"wm-{index:06d}.png"
            entry.watermark_channels = pair.wm.image.channels
            save_image(image=pair.wm.image, path=os.path.join(directory, entry.watermark_image))
        entries.append(entry)

    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path, 'w') as file:
            file.write(PairManifest(pairs=entries).model_dump_json(indent=2))
    except OSError as error:
        raise ArtifactWriteError(f"Cannot write pair manifest {path}: {error}")

    return path


def load_pairs(directory: Union[str, os.PathLike]) -> List[AttackPair]:
    path = os.path.join(directory, MANIFEST_NAME)
    try:
        with open(path) as file:
            manifest = PairManifest.model_validate_json(file.read())
    except OSError as error:
        raise InsufficientPairsError(f"Cannot read pair manifest {path}: {error}")
    if manifest.version != MANIFEST_VERSION:
        raise InsufficientPairsError(f"Pair manifest {path} has unsupported version {manifest.version}.")

    pairs = []
    for entry in manifest.pairs:
        image = load_image(os.path.join(directory, entry.image), target_channels=entry.channels)
        if entry.bits is not None:
            watermark = Watermark.from_bits(hex_to_bits(entry.bits, entry.bit_count))
        else:
            picture = load_image(os.path.join(directory, entry.watermark_image),
                                 target_channels=entry.watermark_channels)
            watermark = Watermark.from_image(picture)
        pairs.append(AttackPair(watermarked=image, wm=watermark, source=entry.source))

    return pairs
