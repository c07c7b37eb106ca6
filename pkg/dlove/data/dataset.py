import os
import glob
import logging
import math
from typing import List, Optional, Sequence, Tuple, Union

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, model_validator

from dlove.data.image import Image, Watermark, load_image, adapt
from dlove.utils.enums import Split
from dlove.utils.exceptions import DatasetError
from dlove.utils.models import SyntheticSpec, validate_image_shape
from dlove.utils.scripts import make_generator, derive_seed, uniform_from, randint_from

logger = logging.getLogger(__name__)


class DatasetItem(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    item_id: str
    image: Image
    watermark: Optional[Watermark] = None


class Dataset(BaseModel):
    """
    Ordered images of one shape, optionally paired with watermarks
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    name: str
    items: List[DatasetItem]
    split: Split = Split.train

    @model_validator(mode='after')
    def validate_items(self):
        if self.items:
            shape = self.items[0].image.shape
            for item in self.items:
                if item.image.shape != shape:
                    raise DatasetError(f"Dataset '{self.name}' mixes shapes {shape} and {item.image.shape}.")

        return self

    def __len__(self) -> int:
        return len(self.items)

    @property
    def shape(self) -> Tuple[int, int, int]:
        if not self.items:
            raise DatasetError(f"Dataset '{self.name}' is empty.")

        return self.items[0].image.shape

    def stack(self) -> torch.Tensor:
        """(N, C, H, W) batch of every image."""
        return torch.cat([item.image.to_batch() for item in self.items], dim=0)

    def images(self) -> List[Image]:
        return [item.image for item in self.items]

    def take(self, count: int) -> "Dataset":
        return Dataset(name=self.name, items=self.items[:count], split=self.split)


def _linear_gradient(height: int, width: int, channels: int, generator: torch.Generator) -> torch.Tensor:
    angle = uniform_from(generator, 0.0, 2.0 * math.pi)
    ys = torch.linspace(-1.0, 1.0, height).view(height, 1)
    xs = torch.linspace(-1.0, 1.0, width).view(1, width)
    ramp = (math.cos(angle) * xs + math.sin(angle) * ys) / math.sqrt(2.0)
    ramp = (ramp + 1.0) / 2.0
    start = torch.rand(channels, generator=generator)
    stop = torch.rand(channels, generator=generator)

    return start.view(channels, 1, 1) + (stop - start).view(channels, 1, 1) * ramp.unsqueeze(0)


def _noise_texture(height: int, width: int, channels: int, cells: int, generator: torch.Generator) -> torch.Tensor:
    coarse = torch.rand(1, channels, cells, cells, generator=generator)
    smooth = F.interpolate(coarse, size=(height, width), mode='bilinear', align_corners=False)[0]
    grain = torch.rand(channels, height, width, generator=generator)

    return 0.8 * smooth + 0.2 * grain


def _paint_shape(canvas: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    channels, height, width = canvas.shape
    colour = torch.rand(channels, generator=generator).view(channels, 1, 1)
    cy, cx = uniform_from(generator, 0.0, height), uniform_from(generator, 0.0, width)
    ry = uniform_from(generator, 0.1, 0.4) * height
    rx = uniform_from(generator, 0.1, 0.4) * width
    ys = torch.arange(height, dtype=torch.float32).view(height, 1) + 0.5
    xs = torch.arange(width, dtype=torch.float32).view(1, width) + 0.5

    if randint_from(generator, 2) == 0:
        mask = (((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2) <= 1.0
    else:
        mask = ((ys - cy).abs() <= ry) & ((xs - cx).abs() <= rx)

    return torch.where(mask.unsqueeze(0), colour.expand_as(canvas), canvas)


def synthesize_image(spec: SyntheticSpec, shape: Sequence[int], generator: torch.Generator) -> Image:
    height, width, channels = shape
    layers = []
    if spec.gradients:
        layers.append(_linear_gradient(height, width, channels, generator))
    if spec.textures:
        layers.append(_noise_texture(height, width, channels, spec.texture_cells, generator))
    if not layers:
        layers.append(torch.rand(channels, 1, 1, generator=generator).expand(channels, height, width))

    weights = torch.rand(len(layers), generator=generator) + 0.25
    weights = weights / weights.sum()
    canvas = sum(weight * layer for weight, layer in zip(weights, layers))

    for _ in range(randint_from(generator, spec.max_shapes + 1)):
        canvas = _paint_shape(canvas, generator)

    return Image(pixels=canvas.clamp(0.0, 1.0).permute(1, 2, 0).contiguous())


def build_dataset(source: Union[SyntheticSpec, str, os.PathLike], count: int, shape: Sequence[int], seed: int,
                  name: str = 'dataset', split: Split = Split.train, allow_replacement: bool = False) -> Dataset:
    if count < 1:
        raise DatasetError(f"Datasets need at least one item, got count={count}.")
    shape = validate_image_shape(shape=tuple(shape))
    generator = make_generator(seed)

    if isinstance(source, SyntheticSpec):
        items = [
            DatasetItem(item_id=f"{name}-{index:06d}", image=synthesize_image(spec=source, shape=shape,
                                                                               generator=generator))
            for index in range(count)
        ]
        logger.debug("Synthesized %d images of shape %s for '%s'", count, shape, name)

        return Dataset(name=name, items=items, split=split)

    directory = os.fspath(source)
    if not os.path.isdir(directory):
        raise DatasetError(f"Dataset source {directory} is not a directory.")
    paths = sorted(glob.glob(os.path.join(directory, '*.png')))
    if not paths:
        raise DatasetError(f"Dataset source {directory} holds no PNG images.")
    if count > len(paths) and not allow_replacement:
        raise DatasetError(f"Requested {count} images but {directory} holds only {len(paths)}.")

    if count > len(paths):
        order = torch.randint(0, len(paths), (count,), generator=generator).tolist()
    else:
        order = torch.randperm(len(paths), generator=generator)[:count].tolist()

    items = []
    for position, index in enumerate(order):
        image = load_image(paths[index], target_channels=shape[2])
        image = adapt(image=image, shape=shape)
        items.append(DatasetItem(item_id=f"{os.path.basename(paths[index])}#{position}", image=image))

    return Dataset(name=name, items=items, split=split)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded split into disjoint train/test datasets; the test side keeps at least one item."""
    if len(dataset) < 2:
        raise DatasetError(f"Dataset '{dataset.name}' needs at least two items to split.")

    test_count = min(len(dataset) - 1, max(1, int(round(len(dataset) * test_fraction))))
    order = torch.randperm(len(dataset), generator=make_generator(derive_seed(seed, 'split'))).tolist()
    test_index = set(order[:test_count])

    train_items = [item for index, item in enumerate(dataset.items) if index not in test_index]
    test_items = [item for index, item in enumerate(dataset.items) if index in test_index]

    return (Dataset(name=f"{dataset.name}-train", items=train_items, split=Split.train),
            Dataset(name=f"{dataset.name}-test", items=test_items, split=Split.test))
