import torch
import torch.nn as nn


class ConvBlock(nn.Module):
    """Conv + optional LeakyReLU; no normalization so decoders behave identically in train and eval."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3, stride: int = 1,
                 activ: bool = True):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size, stride, padding=kernel_size // 2)
        self.activ = nn.LeakyReLU(0.2) if activ else None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.conv(x)
        if self.activ:
            x = self.activ(x)
        return x


class UpBlock(nn.Module):
    """Upsample x2, conv, concatenate the skip connection, conv."""

    def __init__(self, in_channels: int, skip_channels: int, out_channels: int):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode='nearest')
        self.conv1 = ConvBlock(in_channels, out_channels)
        self.conv2 = ConvBlock(out_channels + skip_channels, out_channels)

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = self.conv1(self.up(x))
        x = torch.cat([x, skip], dim=1)
        return self.conv2(x)
