from .image import (Image, Watermark, load_image, save_image, quantize, sample_bit_watermark, resize, resize_batch,
                    convert_channels, convert_channels_batch, adapt, adapt_batch)
from .dataset import Dataset, DatasetItem, build_dataset, split_dataset, synthesize_image
