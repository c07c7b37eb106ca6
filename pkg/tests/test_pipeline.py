import pytest
import torch

from conftest import make_profile
from dlove.data.image import Image, Watermark
from dlove.nets.pipeline import (WatermarkEstimate, build_pipeline, decode, decode_bits, embed, embed_many, extract)
from dlove.nets.profiles import DESK_PROFILES, FULL_PROFILES, PIMOG, get_finetune_preset, get_profile
from dlove.utils.enums import NoiseKind, WatermarkKind
from dlove.utils.exceptions import (ConfigError, InvalidProfileError, ShapeMismatchError, WatermarkKindError)
from dlove.utils.models import NoiseSpec, TechniqueProfile


def test_tiny_pipeline_is_small(tiny_pipeline):
    assert sum(parameter.numel() for parameter in tiny_pipeline.parameters()) < 500


def test_build_is_seeded(tiny_profile):
    first = build_pipeline(profile=tiny_profile, seed=3).state_dict()
    second = build_pipeline(profile=tiny_profile, seed=3).state_dict()
    other = build_pipeline(profile=tiny_profile, seed=4).state_dict()

    assert all(torch.equal(first[key], second[key]) for key in first)
    assert not all(torch.equal(first[key], other[key]) for key in first)


def test_build_rejects_sides_not_divisible_by_four():
    with pytest.raises(InvalidProfileError):
        build_pipeline(profile=make_profile(cover_shape=(10, 8, 1)), seed=0)


def test_build_rejects_watermark_image_of_other_size():
    profile = TechniqueProfile(name='images', cover_shape=(8, 8, 3), watermark_kind=WatermarkKind.image,
                               watermark_size=(4, 4, 3))

    with pytest.raises(InvalidProfileError):
        build_pipeline(profile=profile, seed=0)


def test_discriminator_follows_profile():
    assert build_pipeline(profile=make_profile(), seed=0).discriminator is None
    assert build_pipeline(profile=make_profile(has_discriminator=True), seed=0).discriminator is not None


def test_embed_and_extract_shapes(tiny_pipeline):
    cover = Image(pixels=torch.rand(8, 8, 1, dtype=torch.float64, generator=torch.Generator().manual_seed(0)))
    watermarked = embed(tiny_pipeline, cover, Watermark.from_bits([1, 0]))
    estimate = extract(tiny_pipeline, watermarked)

    assert watermarked.shape == (8, 8, 1)
    assert float(watermarked.pixels.min()) >= 0.0
    assert float(watermarked.pixels.max()) <= 1.0
    assert estimate.kind == WatermarkKind.bits
    assert estimate.logits.shape == (2,)
    assert decode(tiny_pipeline, watermarked).size == 2


def test_embed_many_matches_embed(tiny_pipeline):
    generator = torch.Generator().manual_seed(1)
    covers = [Image(pixels=torch.rand(8, 8, 1, dtype=torch.float64, generator=generator)) for _ in range(3)]
    marks = [Watermark.from_bits([index % 2, 1]) for index in range(3)]

    batched = embed_many(tiny_pipeline, covers, marks, batch_size=2)

    for cover, mark, image in zip(covers, marks, batched):
        assert torch.allclose(image.pixels, embed(tiny_pipeline, cover, mark).pixels)


def test_embed_rejects_wrong_bit_count(tiny_pipeline):
    with pytest.raises(ShapeMismatchError):
        embed(tiny_pipeline, Image.constant(0.5, (8, 8, 1)), Watermark.from_bits([1, 0, 1]))


def test_embed_rejects_wrong_kind(tiny_pipeline):
    mark = Watermark.from_image(Image.constant(0.5, (8, 8, 1)))

    with pytest.raises(WatermarkKindError):
        embed(tiny_pipeline, Image.constant(0.5, (8, 8, 1)), mark)


def test_extract_rejects_wrong_shape(tiny_pipeline):
    with pytest.raises(ShapeMismatchError):
        extract(tiny_pipeline, Image.constant(0.5, (8, 8, 3)))


def test_zero_logit_decodes_to_zero():
    estimate = WatermarkEstimate(kind=WatermarkKind.bits, logits=torch.tensor([0.0, 1e-9, -1.0, 3.0]))

    assert decode_bits(estimate).bit_list() == [0, 1, 0, 1]


def test_image_pipeline_round_trip_shapes():
    profile = TechniqueProfile(name='images', cover_shape=(8, 8, 3), watermark_kind=WatermarkKind.image,
                               watermark_size=(8, 8, 1))
    pipeline = build_pipeline(profile=profile, seed=2)
    mark = Watermark.from_image(Image.constant(0.3, (8, 8, 1)))

    watermarked = embed(pipeline, Image.constant(0.5, (8, 8, 3)), mark)
    recovered = decode(pipeline, watermarked)

    assert extract(pipeline, watermarked).logits.shape == (8, 8, 1)
    assert recovered.kind == WatermarkKind.image
    assert recovered.size == (8, 8, 1)


def test_bit_profile_needs_bit_count():
    with pytest.raises(ConfigError):
        TechniqueProfile(name='bad', cover_shape=(8, 8, 1), watermark_kind=WatermarkKind.bits,
                         watermark_size=(8, 8, 1))


def test_image_profile_needs_shape():
    with pytest.raises(ConfigError):
        TechniqueProfile(name='bad', cover_shape=(8, 8, 1), watermark_kind=WatermarkKind.image, watermark_size=8)


def test_screen_shoot_profile_needs_its_noise():
    with pytest.raises(ConfigError):
        make_profile(screen_shoot_robust=True,
                     noise_layers=[NoiseSpec(kind=NoiseKind.perspective_warp, strength=0.05)])


def test_named_profiles():
    assert get_profile(PIMOG).screen_shoot_robust
    assert get_profile(PIMOG, full_scale=True).cover_shape == (128, 128, 3)
    assert set(DESK_PROFILES) == set(FULL_PROFILES)
    assert get_finetune_preset(PIMOG)[0].epochs == 70

    with pytest.raises(ConfigError):
        get_profile('stegastamp')
