import math
import logging
from typing import Callable, Dict

import torch
import torch.nn.functional as F

from dlove.data.image import Image
from dlove.utils.enums import NoiseKind, SeedPolicy
from dlove.utils.models import NoiseSpec, check_noise_spec
from dlove.utils.scripts import make_generator, randint_from

logger = logging.getLogger(__name__)


def _depthwise(batch: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    channels = batch.shape[1]
    size = kernel.shape[-1]
    weight = kernel.to(batch.dtype).view(1, 1, size, size).expand(channels, 1, size, size)
    padded = F.pad(batch, (size // 2,) * 4, mode='replicate')

    return F.conv2d(padded, weight, groups=channels)


def _uniform(shape, low: float, high: float, generator: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    return low + (high - low) * torch.rand(shape, generator=generator, dtype=like.dtype)


def gaussian_noise(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    if strength == 0:
        return batch

    return batch + strength * torch.randn(batch.shape, generator=generator, dtype=batch.dtype)


def blur(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    size = int(strength)
    if size == 1:
        return batch

    return _depthwise(batch, torch.full((size, size), 1.0 / (size * size)))


def crop(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    """Keeps a random window covering `strength` of the area and blanks the rest."""
    if strength == 1:
        return batch

    height, width = batch.shape[-2:]
    side = math.sqrt(strength)
    keep_h, keep_w = max(1, round(height * side)), max(1, round(width * side))
    mask = torch.zeros(batch.shape[0], 1, height, width, dtype=batch.dtype)
    for index in range(batch.shape[0]):
        top = randint_from(generator, height - keep_h + 1)
        left = randint_from(generator, width - keep_w + 1)
        mask[index, :, top:top + keep_h, left:left + keep_w] = 1.0

    return batch * mask


def _homographies(source: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """(B, 3, 3) maps taking each source corner set onto its target corner set."""
    rows = []
    for corner in range(4):
        x, y = source[:, corner, 0], source[:, corner, 1]
        u, v = target[:, corner, 0], target[:, corner, 1]
        one, zero = torch.ones_like(x), torch.zeros_like(x)
        rows.append(torch.stack([x, y, one, zero, zero, zero, -x * u, -y * u], dim=1))
        rows.append(torch.stack([zero, zero, zero, x, y, one, -x * v, -y * v], dim=1))
    system = torch.stack(rows, dim=1)
    rhs = torch.stack([target[:, corner, axis] for corner in range(4) for axis in range(2)], dim=1).unsqueeze(2)
    solution = torch.linalg.solve(system, rhs).squeeze(2)

    return torch.cat([solution, torch.ones_like(solution[:, :1])], dim=1).view(-1, 3, 3)


def perspective_warp(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    if strength == 0:
        return batch

    count, _, height, width = batch.shape
    corners = torch.tensor([[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]], dtype=torch.float64)
    corners = corners.unsqueeze(0).expand(count, 4, 2)
    # normalized coordinates span 2 units per side
    shifted = corners + _uniform((count, 4, 2), -2.0 * strength, 2.0 * strength, generator, corners)
    homography = _homographies(corners, shifted).to(batch.dtype)

    identity = torch.eye(2, 3, dtype=batch.dtype).unsqueeze(0).expand(count, 2, 3)
    grid = F.affine_grid(identity, [count, 1, height, width], align_corners=False)
    points = torch.cat([grid, torch.ones_like(grid[..., :1])], dim=-1)
    mapped = torch.einsum('bij,bhwj->bhwi', homography, points)
    grid = mapped[..., :2] / mapped[..., 2:].clamp_min(1e-6)

    return F.grid_sample(batch, grid, mode='bilinear', padding_mode='border', align_corners=False)


def motion_blur(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    size = int(strength)
    if size == 1:
        return batch

    kernel = torch.zeros(size, size)
    direction = randint_from(generator, 4)
    if direction == 0:
        kernel[size // 2, :] = 1.0
    elif direction == 1:
        kernel[:, size // 2] = 1.0
    elif direction == 2:
        kernel = torch.eye(size)
    else:
        kernel = torch.eye(size).flip(1)

    return _depthwise(batch, kernel / size)


def color_jitter(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    if strength == 0:
        return batch

    count, channels = batch.shape[:2]
    brightness = _uniform((count, 1, 1, 1), -strength, strength, generator, batch)
    contrast = _uniform((count, 1, 1, 1), 1.0 - strength, 1.0 + strength, generator, batch)
    gain = _uniform((count, channels, 1, 1), 1.0 - strength / 2, 1.0 + strength / 2, generator, batch)
    mean = batch.mean(dim=(1, 2, 3), keepdim=True)

    return ((batch - mean) * contrast + mean) * gain + brightness


def dropout(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    if strength == 0:
        return batch

    keep = torch.rand((batch.shape[0], 1, *batch.shape[2:]), generator=generator, dtype=batch.dtype) >= strength

    return batch * keep.to(batch.dtype)


def jpeg_approx(batch: torch.Tensor, strength: float, generator: torch.Generator) -> torch.Tensor:
    """3×3 blur followed by straight-through quantization with step `strength`."""
    smoothed = blur(batch, 3, generator)
    if strength == 0:
        return smoothed

    quantized = torch.round(smoothed / strength) * strength

    return smoothed + (quantized - smoothed).detach()


NOISE_LAYERS: Dict[NoiseKind, Callable[[torch.Tensor, float, torch.Generator], torch.Tensor]] = {
    NoiseKind.gaussian_noise: gaussian_noise,
    NoiseKind.blur: blur,
    NoiseKind.crop: crop,
    NoiseKind.perspective_warp: perspective_warp,
    NoiseKind.motion_blur: motion_blur,
    NoiseKind.color_jitter: color_jitter,
    NoiseKind.dropout: dropout,
    NoiseKind.jpeg_approx: jpeg_approx,
}


def generator_for(spec: NoiseSpec, generator: torch.Generator) -> torch.Generator:
    if spec.seed_policy == SeedPolicy.fixed:
        return make_generator(spec.seed)

    return generator


def noise_batch(batch: torch.Tensor, spec: NoiseSpec, generator: torch.Generator) -> torch.Tensor:
    check_noise_spec(kind=spec.kind, strength=spec.strength)
    distorted = NOISE_LAYERS[spec.kind](batch, spec.strength, generator_for(spec=spec, generator=generator))

    return distorted.clamp(0.0, 1.0)


def apply_noise(image: Image, spec: NoiseSpec, seed: int) -> Image:
    distorted = noise_batch(batch=image.to_batch(), spec=spec, generator=make_generator(seed))

    return Image.from_batch(distorted)
