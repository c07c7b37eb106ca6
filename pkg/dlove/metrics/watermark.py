import torch

from dlove.data.image import Watermark
from dlove.utils.enums import WatermarkKind
from dlove.utils.exceptions import ShapeMismatchError, WatermarkKindError


def _bit_pair(a: Watermark, b: Watermark):
    if a.kind != WatermarkKind.bits or b.kind != WatermarkKind.bits:
        raise WatermarkKindError("Bit error rates compare two bit-string watermarks.")
    if a.size != b.size:
        raise ShapeMismatchError(f"Cannot compare watermarks of {a.size} and {b.size} bits.")

    return a.bits.to(torch.int64), b.bits.to(torch.int64)


def ber(a: Watermark, b: Watermark) -> float:
    x, y = _bit_pair(a, b)

    return int((x != y).sum()) / x.numel()


def bit_accuracy(a: Watermark, b: Watermark) -> float:
    return 1.0 - ber(a, b)


def cosine_similarity(a: Watermark, b: Watermark) -> float:
    """Bits are compared as ±1 vectors, image watermarks as mean-centered pixel vectors."""
    if a.kind != b.kind:
        raise WatermarkKindError(f"Cannot compare '{a.kind.value}' and '{b.kind.value}' watermarks.")
    if a.size != b.size:
        raise ShapeMismatchError(f"Cannot compare watermarks of sizes {a.size} and {b.size}.")

    if a.kind == WatermarkKind.bits:
        x = 2.0 * a.bits.double() - 1.0
        y = 2.0 * b.bits.double() - 1.0
    else:
        x = a.image.pixels.double().flatten()
        y = b.image.pixels.double().flatten()
        x, y = x - x.mean(), y - y.mean()

    norm = float(x.norm() * y.norm())
    if norm == 0.0:
        # flat images carry no direction
        return 1.0 if a.equals(b) else 0.0

    return max(-1.0, min(1.0, float(x @ y) / norm))
