import os

import numpy as np
import pytest
import torch
from PIL import Image as PILImage

from dlove.data.dataset import build_dataset, split_dataset
from dlove.data.image import (Image, Watermark, adapt, convert_channels, load_image, quantize, resize,
                              sample_bit_watermark, save_image)
from dlove.utils.enums import Split, WatermarkKind
from dlove.utils.exceptions import (CorruptImageError, DatasetError, ImageReadError, ImageWriteError,
                                    ShapeMismatchError, UnsupportedBitDepthError, WatermarkKindError)
from dlove.utils.models import SyntheticSpec


def test_image_rejects_out_of_range_intensities():
    with pytest.raises(ShapeMismatchError):
        Image(pixels=torch.full((4, 4, 1), 1.5))


def test_image_rejects_two_channels():
    with pytest.raises(ShapeMismatchError):
        Image(pixels=torch.zeros(4, 4, 2))


def test_image_rejects_non_finite():
    pixels = torch.zeros(4, 4, 3)
    pixels[0, 0, 0] = float('nan')

    with pytest.raises(ShapeMismatchError):
        Image(pixels=pixels)


def test_image_batch_layout():
    image = Image(pixels=torch.rand(5, 7, 3))
    batch = image.to_batch()

    assert batch.shape == (1, 3, 5, 7)
    assert torch.equal(Image.from_batch(batch).pixels, image.pixels)


def test_watermark_rejects_non_binary_bits():
    with pytest.raises(WatermarkKindError):
        Watermark.from_bits([0, 2, 1])


def test_watermark_needs_payload():
    with pytest.raises(WatermarkKindError):
        Watermark(kind=WatermarkKind.image)


def test_sample_bit_watermark_is_seeded():
    first = sample_bit_watermark(n=30, seed=11)
    second = sample_bit_watermark(n=30, seed=11)

    assert first.size == 30
    assert first.equals(second)
    assert not first.equals(sample_bit_watermark(n=30, seed=12))


def test_sample_bit_watermark_differs_across_seeds():
    pairs = [(sample_bit_watermark(n=16, seed=seed), sample_bit_watermark(n=16, seed=seed + 1000))
             for seed in range(100)]

    assert sum(not first.equals(second) for first, second in pairs) >= 99


def test_sample_bit_watermark_needs_bits():
    with pytest.raises(WatermarkKindError):
        sample_bit_watermark(n=0, seed=1)


def test_png_keeps_quantized_pixels(tmp_path):
    image = quantize(Image(pixels=torch.rand(6, 6, 3, generator=torch.Generator().manual_seed(0))))
    path = tmp_path / 'image.png'

    save_image(image=image, path=path)
    loaded = load_image(path, target_channels=3)

    assert loaded.shape == (6, 6, 3)
    assert torch.allclose(loaded.pixels, image.pixels, atol=1e-6)


def test_load_grayscale_as_rgb_replicates_channel(tmp_path):
    path = tmp_path / 'gray.png'
    PILImage.fromarray(np.full((4, 4), 128, dtype=np.uint8), mode='L').save(path)

    loaded = load_image(path, target_channels=3)

    assert loaded.shape == (4, 4, 3)
    assert torch.allclose(loaded.pixels, torch.full((4, 4, 3), 128 / 255.0))


def test_load_missing_file(tmp_path):
    with pytest.raises(ImageReadError):
        load_image(tmp_path / 'missing.png')


def test_load_corrupt_stream(tmp_path):
    path = tmp_path / 'broken.png'
    path.write_bytes(b'not a png at all, just some bytes for the reader')

    with pytest.raises(CorruptImageError):
        load_image(path)


def test_load_sixteen_bit_png(tmp_path):
    path = tmp_path / 'wide.png'
    PILImage.fromarray(np.full((4, 4), 40000, dtype=np.uint16)).save(path)

    with pytest.raises(UnsupportedBitDepthError):
        load_image(path, target_channels=1)


def test_save_into_missing_directory(tmp_path):
    with pytest.raises(ImageWriteError):
        save_image(image=Image.constant(0.5, (4, 4, 1)), path=os.path.join(tmp_path, 'absent', 'image.png'))


def test_quantize_is_idempotent():
    image = Image(pixels=torch.rand(4, 4, 1, generator=torch.Generator().manual_seed(3)))
    once = quantize(image)

    assert torch.equal(quantize(once).pixels, once.pixels)
    assert float((once.pixels - image.pixels).abs().max()) <= 0.5 / 255.0 + 1e-7


def test_resize_and_channel_conversion():
    image = Image(pixels=torch.rand(8, 8, 3, generator=torch.Generator().manual_seed(4)))

    assert resize(image, 16, 4).shape == (16, 4, 3)
    gray = convert_channels(image, 1)
    assert gray.shape == (8, 8, 1)
    assert torch.allclose(gray.pixels[..., 0], image.pixels.mean(dim=2), atol=1e-6)
    assert adapt(gray, (4, 4, 3)).shape == (4, 4, 3)


def test_bilinear_resize_of_a_ramp():
    image = Image(pixels=torch.tensor([[0.0, 1.0], [0.0, 1.0]], dtype=torch.float64).unsqueeze(2))

    resized = resize(image, 2, 4)

    expected = torch.tensor([0.0, 0.25, 0.75, 1.0], dtype=torch.float64)
    assert torch.allclose(resized.pixels[..., 0], expected.expand(2, 4), atol=1e-12)


def test_convert_channels_rejects_two():
    with pytest.raises(ShapeMismatchError):
        convert_channels(Image.constant(0.1, (4, 4, 3)), 2)


def test_synthetic_dataset_is_seeded(synthetic_dataset):
    first = synthetic_dataset(count=5, shape=(12, 8, 3), seed=21)
    second = synthetic_dataset(count=5, shape=(12, 8, 3), seed=21)

    assert len(first) == 5
    assert first.shape == (12, 8, 3)
    assert torch.equal(first.stack(), second.stack())
    assert not torch.equal(first.stack(), synthetic_dataset(count=5, shape=(12, 8, 3), seed=22).stack())


def test_synthetic_images_stay_in_range(synthetic_dataset):
    batch = synthetic_dataset(count=20, shape=(16, 16, 1)).stack()

    assert float(batch.min()) >= 0.0
    assert float(batch.max()) <= 1.0


def test_build_dataset_needs_items():
    with pytest.raises(DatasetError):
        build_dataset(source=SyntheticSpec(), count=0, shape=(8, 8, 1), seed=1)


def test_dataset_from_directory(tmp_path):
    for index in range(3):
        value = np.full((10, 10, 3), 60 * index, dtype=np.uint8)
        PILImage.fromarray(value, 'RGB').save(tmp_path / f"{index}.png")

    data = build_dataset(source=str(tmp_path), count=3, shape=(8, 8, 1), seed=5, name='folder')

    assert len(data) == 3
    assert data.shape == (8, 8, 1)
    with pytest.raises(DatasetError):
        build_dataset(source=str(tmp_path), count=4, shape=(8, 8, 1), seed=5)
    assert len(build_dataset(source=str(tmp_path), count=4, shape=(8, 8, 1), seed=5,
                             allow_replacement=True)) == 4


def test_dataset_from_empty_directory(tmp_path):
    with pytest.raises(DatasetError):
        build_dataset(source=str(tmp_path), count=1, shape=(8, 8, 1), seed=5)


def test_split_is_disjoint_and_seeded(synthetic_dataset):
    data = synthetic_dataset(count=20)
    train, test = split_dataset(dataset=data, test_fraction=0.25, seed=9)
    again, _ = split_dataset(dataset=data, test_fraction=0.25, seed=9)

    assert len(test) == 5
    assert len(train) == 15
    assert train.split == Split.train
    assert test.split == Split.test
    assert not {item.item_id for item in train.items} & {item.item_id for item in test.items}
    assert [item.item_id for item in train.items] == [item.item_id for item in again.items]


def test_split_needs_two_items(synthetic_dataset):
    with pytest.raises(DatasetError):
        split_dataset(dataset=synthetic_dataset(count=1), test_fraction=0.5, seed=1)
