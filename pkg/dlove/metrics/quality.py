import math

import torch
import torch.nn.functional as F

from dlove.data.image import Image
from dlove.nets.perceptual import perceptual_distance, pyramid_for
from dlove.utils.exceptions import ConfigError, ShapeMismatchError

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _pair(a: Image, b: Image):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Cannot compare images of shapes {a.shape} and {b.shape}.")

    return a.to_batch().double(), b.to_batch().double()


def psnr_from_mse(value: float) -> float:
    if value < MSE_FLOOR:
        return PSNR_CAP

    return 10.0 * math.log10(1.0 / value)


def mse(a: Image, b: Image) -> float:
    x, y = _pair(a, b)

    return float((x - y).pow(2).mean())


def psnr(a: Image, b: Image) -> float:
    return psnr_from_mse(mse(a, b))


def psnr_batch(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-item PSNR of two (B, C, H, W) batches, capped like psnr."""
    errors = (a.double() - b.double()).pow(2).flatten(1).mean(dim=1)
    values = 10.0 * torch.log10(1.0 / errors.clamp_min(MSE_FLOOR))

    return torch.where(errors < MSE_FLOOR, torch.full_like(values, PSNR_CAP), values)


def ssim(a: Image, b: Image) -> float:
    """
    Single-scale SSIM with a uniform 8×8 window, stride 1, no padding, averaged over channels and positions.
    """
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ShapeMismatchError(f"SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {a.shape}.")
    x, y = _pair(a, b)

    def window_mean(tensor: torch.Tensor) -> torch.Tensor:
        return F.avg_pool2d(tensor, SSIM_WINDOW, stride=1)

    mu_x, mu_y = window_mean(x), window_mean(y)
    mu_xy = mu_x * mu_y
    var_x = window_mean(x * x) - mu_x * mu_x
    var_y = window_mean(y * y) - mu_y * mu_y
    covariance = window_mean(x * y) - mu_xy

    numerator = (2.0 * mu_xy + SSIM_C1) * (2.0 * covariance + SSIM_C2)
    denominator = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)

    return float((numerator / denominator).mean().clamp(-1.0, 1.0))


def lpips_proxy(a: Image, b: Image, pyramid_seed: int) -> float:
    """Per-stage mean squared difference of raw pyramid features, averaged over stages; no unit normalization."""
    x, y = _pair(a, b)
    pyramid = pyramid_for(seed=pyramid_seed, channels=a.channels, dtype=torch.float64)

    with torch.no_grad():
        return float(perceptual_distance(x, y, pyramid)[0])


def residual(cover: Image, attacked: Image, gain: float) -> Image:
    if gain <= 0:
        raise ConfigError(f"Residual gain must be positive, got {gain}.")
    x, y = _pair(cover, attacked)

    return Image(pixels=(0.5 + gain * (y - x)).clamp(0.0, 1.0)[0].permute(1, 2, 0).to(cover.pixels.dtype))
