import torch
import torch.nn as nn
import torch.nn.functional as F

from dlove.nets.layers import ConvBlock, UpBlock
from dlove.utils.models import TechniqueProfile


class BitDecoder(nn.Module):
    """
    Conv stack followed by two fully connected layers ending in N logits.

    Two of the conv layers downsample by 2; the feature map is pooled to 4×4 before the FC head.
    """

    def __init__(self, profile: TechniqueProfile):
        super().__init__()
        channels = profile.cover_shape[2]
        blocks = profile.architecture.decoder_blocks
        base = profile.architecture.decoder_channels
        strided = {blocks // 3, (2 * blocks) // 3}

        self.convs = nn.Sequential(*[
            ConvBlock(channels if index == 0 else base, base, stride=2 if index in strided else 1)
            for index in range(blocks)
        ])
        self.fc1 = nn.Linear(base * 16, profile.architecture.fc_hidden)
        self.fc2 = nn.Linear(profile.architecture.fc_hidden, profile.bit_count)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.convs(images)
        x = F.adaptive_avg_pool2d(x, (4, 4)).flatten(1)
        x = F.leaky_relu(self.fc1(x), 0.2)
        return self.fc2(x)


class ImageDecoder(nn.Module):
    """
    Convolutional autoencoder recovering an image watermark; outputs raw pixel estimates.
    """

    def __init__(self, profile: TechniqueProfile):
        super().__init__()
        channels = profile.cover_shape[2]
        out_channels = profile.watermark_size[2]
        base = profile.architecture.decoder_channels

        self.enc0 = ConvBlock(channels, base)
        self.enc1 = ConvBlock(base, 2 * base, stride=2)
        self.enc2 = ConvBlock(2 * base, 4 * base, stride=2)
        self.dec1 = UpBlock(4 * base, 2 * base, 2 * base)
        self.dec0 = UpBlock(2 * base, base, base)
        self.head = ConvBlock(base, out_channels, kernel_size=1, activ=False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        e0 = self.enc0(images)
        e1 = self.enc1(e0)
        x = self.enc2(e1)
        x = self.dec1(x, e1)
        x = self.dec0(x, e0)
        return self.head(x)


class Discriminator(nn.Module):
    """Conv stack scoring how cover-like an image is (real score, higher = cover)."""

    def __init__(self, profile: TechniqueProfile):
        super().__init__()
        channels = profile.cover_shape[2]
        base = profile.architecture.discriminator_channels

        self.convs = nn.Sequential(
            ConvBlock(channels, base, stride=2),
            ConvBlock(base, base, stride=2),
            ConvBlock(base, base),
        )
        self.score = nn.Linear(base, 1)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = self.convs(images).mean(dim=(2, 3))
        return self.score(x).squeeze(1)
