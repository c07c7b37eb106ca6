import threading
from typing import Dict, List, Tuple

import torch
import torch.nn as nn

from dlove.nets.layers import ConvBlock
from dlove.utils.scripts import seeded, derive_seed

PYRAMID_WIDTHS = (8, 16, 32, 64)

_cache: Dict[Tuple[int, int, torch.dtype], "FeaturePyramid"] = {}
_lock = threading.Lock()


class FeaturePyramid(nn.Module):
    """
    Fixed, randomly initialized 4-stage conv pyramid standing in for a pretrained perceptual network.
    """

    def __init__(self, channels: int):
        super().__init__()
        widths = (channels,) + PYRAMID_WIDTHS
        self.stages = nn.ModuleList([
            ConvBlock(widths[index], widths[index + 1], stride=2) for index in range(len(PYRAMID_WIDTHS))
        ])

    def forward(self, images: torch.Tensor) -> List[torch.Tensor]:
        x = 2.0 * images - 1.0
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features


def pyramid_for(seed: int, channels: int, dtype: torch.dtype = torch.float32) -> FeaturePyramid:
    key = (seed, channels, dtype)
    with _lock:
        if key not in _cache:
            with seeded(derive_seed(seed, 'pyramid', channels)):
                pyramid = FeaturePyramid(channels)
            pyramid = pyramid.to(dtype).eval()
            pyramid.requires_grad_(False)
            _cache[key] = pyramid

        return _cache[key]


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, pyramid: FeaturePyramid) -> torch.Tensor:
    """Per-item distance of two (B, C, H, W) batches: mean squared feature difference, averaged over stages."""
    stages = [
        (fa - fb).pow(2).flatten(1).mean(dim=1)
        for fa, fb in zip(pyramid(a), pyramid(b))
    ]

    return torch.stack(stages, dim=1).mean(dim=1)
