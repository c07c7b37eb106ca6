import pytest
import torch

from dlove.data.image import Image
from dlove.nets.noise import apply_noise, jpeg_approx, noise_batch
from dlove.utils.enums import NoiseKind, SeedPolicy
from dlove.utils.exceptions import NoiseSpecError
from dlove.utils.models import NoiseSpec
from dlove.utils.scripts import make_generator

STRENGTHS = {
    NoiseKind.gaussian_noise: 0.1,
    NoiseKind.blur: 3,
    NoiseKind.crop: 0.5,
    NoiseKind.perspective_warp: 0.1,
    NoiseKind.motion_blur: 5,
    NoiseKind.color_jitter: 0.2,
    NoiseKind.dropout: 0.4,
    NoiseKind.jpeg_approx: 0.1,
}

IDENTITY = {
    NoiseKind.gaussian_noise: 0.0,
    NoiseKind.blur: 1,
    NoiseKind.crop: 1.0,
    NoiseKind.perspective_warp: 0.0,
    NoiseKind.motion_blur: 1,
    NoiseKind.color_jitter: 0.0,
    NoiseKind.dropout: 0.0,
}


@pytest.fixture
def batch():
    return torch.rand(3, 3, 16, 16, generator=torch.Generator().manual_seed(1))


@pytest.mark.parametrize('kind', list(NoiseKind))
def test_noise_keeps_shape_and_range(batch, kind):
    distorted = noise_batch(batch=batch, spec=NoiseSpec(kind=kind, strength=STRENGTHS[kind]),
                            generator=make_generator(2))

    assert distorted.shape == batch.shape
    assert float(distorted.min()) >= 0.0
    assert float(distorted.max()) <= 1.0


@pytest.mark.parametrize('kind', list(IDENTITY))
def test_noise_identity_strength(batch, kind):
    distorted = noise_batch(batch=batch, spec=NoiseSpec(kind=kind, strength=IDENTITY[kind]),
                            generator=make_generator(2))

    assert torch.allclose(distorted, batch)


@pytest.mark.parametrize('kind', list(NoiseKind))
def test_noise_passes_gradients(batch, kind):
    covers = batch.clone().requires_grad_(True)
    distorted = noise_batch(batch=covers, spec=NoiseSpec(kind=kind, strength=STRENGTHS[kind]),
                            generator=make_generator(3))
    distorted.sum().backward()

    assert covers.grad is not None
    assert bool(torch.isfinite(covers.grad).all())


def test_fixed_seed_policy_ignores_batch_generator(batch):
    spec = NoiseSpec(kind=NoiseKind.dropout, strength=0.5, seed_policy=SeedPolicy.fixed, seed=77)

    first = noise_batch(batch=batch, spec=spec, generator=make_generator(1))
    second = noise_batch(batch=batch, spec=spec, generator=make_generator(2))

    assert torch.equal(first, second)


def test_fresh_policy_follows_generator(batch):
    spec = NoiseSpec(kind=NoiseKind.dropout, strength=0.5)

    assert not torch.equal(noise_batch(batch=batch, spec=spec, generator=make_generator(1)),
                           noise_batch(batch=batch, spec=spec, generator=make_generator(2)))


def test_apply_noise_is_seeded():
    image = Image(pixels=torch.rand(8, 8, 1, generator=torch.Generator().manual_seed(5)))
    spec = NoiseSpec(kind=NoiseKind.gaussian_noise, strength=0.05)

    assert torch.equal(apply_noise(image, spec, seed=4).pixels, apply_noise(image, spec, seed=4).pixels)


def test_jpeg_approx_straight_through_gradient():
    covers = torch.full((1, 1, 8, 8), 0.5, requires_grad=True)
    jpeg_approx(covers, 0.2, make_generator(0)).sum().backward()

    # with replicate padding every pixel carries a total weight of one in the 3x3 box blur
    assert torch.allclose(covers.grad, torch.ones_like(covers))


@pytest.mark.parametrize('kind, strength', [
    (NoiseKind.gaussian_noise, -0.1),
    (NoiseKind.gaussian_noise, 0.6),
    (NoiseKind.blur, 4),
    (NoiseKind.blur, 11),
    (NoiseKind.motion_blur, 2.5),
    (NoiseKind.crop, 0.0),
    (NoiseKind.crop, 1.2),
    (NoiseKind.dropout, 0.95),
    (NoiseKind.perspective_warp, 0.3),
    (NoiseKind.jpeg_approx, 0.5),
])
def test_noise_strength_out_of_range(kind, strength):
    with pytest.raises(NoiseSpecError):
        NoiseSpec(kind=kind, strength=strength)
