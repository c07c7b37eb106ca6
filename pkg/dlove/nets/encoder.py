import torch
import torch.nn as nn

from dlove.nets.layers import ConvBlock, UpBlock
from dlove.utils.enums import WatermarkKind
from dlove.utils.models import TechniqueProfile


class UNetEncoder(nn.Module):
    """
    Small U-shaped encoder E(I, α) → W.

    Bit watermarks are broadcast as ±1 planes, image watermarks are concatenated as channels.
    The network predicts a residual that is added to the cover and clamped to [0, 1].
    """

    def __init__(self, profile: TechniqueProfile):
        super().__init__()
        self.kind = profile.watermark_kind
        channels = profile.cover_shape[2]
        message_channels = profile.watermark_size if self.kind == WatermarkKind.bits else profile.watermark_size[2]
        base = profile.architecture.encoder_channels

        self.down0 = ConvBlock(channels + message_channels, base)
        self.down1 = ConvBlock(base, 2 * base, stride=2)
        self.bottleneck = ConvBlock(2 * base, 2 * base, stride=2)
        self.up1 = UpBlock(2 * base, 2 * base, 2 * base)
        self.up0 = UpBlock(2 * base, base, base)
        self.residual = ConvBlock(base, channels, kernel_size=1, activ=False)

    def message_planes(self, message: torch.Tensor, height: int, width: int) -> torch.Tensor:
        if self.kind == WatermarkKind.bits:
            planes = 2.0 * message - 1.0
            return planes.view(*planes.shape, 1, 1).expand(-1, -1, height, width)

        return message

    def forward(self, covers: torch.Tensor, message: torch.Tensor) -> torch.Tensor:
        height, width = covers.shape[-2:]
        x = torch.cat([covers, self.message_planes(message.to(covers.dtype), height, width)], dim=1)

        d0 = self.down0(x)
        d1 = self.down1(d0)
        x = self.bottleneck(d1)
        x = self.up1(x, d1)
        x = self.up0(x, d0)

        return (covers + self.residual(x)).clamp(0.0, 1.0)
