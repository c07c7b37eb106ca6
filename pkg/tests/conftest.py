import pytest
import torch
import torch.nn as nn

from dlove.data.dataset import build_dataset
from dlove.data.image import Image, Watermark
from dlove.nets.pipeline import Pipeline, build_pipeline
from dlove.nets.encoder import UNetEncoder
from dlove.utils.enums import WatermarkKind
from dlove.utils.models import ArchitectureSpec, ExperimentConfig, SyntheticSpec, TechniqueProfile

# under 500 parameters end to end, for finite-difference checks
TINY_ARCHITECTURE = ArchitectureSpec(encoder_channels=1, decoder_channels=1, decoder_blocks=3, fc_hidden=2,
                                     discriminator_channels=1)

SMALL_ARCHITECTURE = ArchitectureSpec(encoder_channels=4, decoder_channels=8, decoder_blocks=3, fc_hidden=16,
                                      discriminator_channels=2)


def make_profile(name: str = 'tiny', cover_shape=(8, 8, 1), bits: int = 2,
                 architecture: ArchitectureSpec = TINY_ARCHITECTURE, **kwargs) -> TechniqueProfile:
    return TechniqueProfile(name=name, cover_shape=cover_shape, watermark_kind=WatermarkKind.bits,
                            watermark_size=bits, architecture=architecture, **kwargs)


def profile_document(name: str, cover_shape=(8, 8, 1), bits: int = 2) -> dict:
    return make_profile(name=name, cover_shape=cover_shape, bits=bits).model_dump(mode='json')


class SinglePixelDecoder(nn.Module):
    """Logit k·(x − 0.5) of the first pixel; decodes bit 1 above 0.5."""

    def __init__(self, k: float = 10.0):
        super().__init__()
        self.k = k

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.k * (images.flatten(1)[:, :1] - 0.5)


class LinearDecoder(nn.Module):
    """One logit w·x + b over a flattened image."""

    def __init__(self, weight, bias: float):
        super().__init__()
        self.weight = torch.as_tensor(weight, dtype=torch.float64)
        self.bias = bias

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return (images.flatten(1).to(torch.float64) @ self.weight + self.bias).unsqueeze(1)


class SmoothDecoder(nn.Module):
    """Conv, tanh and a linear read-out over a 1×8×8 image; no kinks, so central differences stay exact."""

    def __init__(self, bits: int = 2, seed: int = 0):
        super().__init__()
        self.conv = nn.Conv2d(1, 2, 3, padding=1).double()
        self.readout = nn.Linear(2 * 8 * 8, bits).double()
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for parameter in self.parameters():
                parameter.copy_(0.3 * torch.randn(parameter.shape, dtype=torch.float64, generator=generator))
        self.requires_grad_(False)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.readout(torch.tanh(self.conv(images)).flatten(1))


@pytest.fixture
def tiny_profile() -> TechniqueProfile:
    return make_profile()


@pytest.fixture
def tiny_pipeline(tiny_profile) -> Pipeline:
    return build_pipeline(profile=tiny_profile, seed=7).double()


@pytest.fixture
def small_profile() -> TechniqueProfile:
    return make_profile(name='small', cover_shape=(16, 16, 1), bits=4, architecture=SMALL_ARCHITECTURE)


@pytest.fixture
def single_pixel_pipeline() -> Pipeline:
    """Identity-free pipeline around the analytic single-pixel decoder (encoder unused by attacks)."""
    profile = make_profile(name='pixel', cover_shape=(4, 4, 1), bits=1)
    pipeline = Pipeline(profile=profile, encoder=UNetEncoder(profile), decoder=SinglePixelDecoder())

    return pipeline.double()


@pytest.fixture
def synthetic_dataset():
    def factory(count: int = 16, shape=(8, 8, 1), seed: int = 3, name: str = 'synthetic'):
        return build_dataset(source=SyntheticSpec(), count=count, shape=shape, seed=seed, name=name)

    return factory


@pytest.fixture
def pixel_image():
    def factory(value: float, shape=(4, 4, 1)) -> Image:
        return Image.constant(value, shape, dtype=torch.float64)

    return factory


@pytest.fixture
def bits():
    def factory(*values: int) -> Watermark:
        return Watermark.from_bits(list(values))

    return factory


def target_document(name: str = 'tiny', cover_shape=(8, 8, 1), bits: int = 2, **overrides) -> dict:
    document = {
        'profile': profile_document(name=name, cover_shape=cover_shape, bits=bits),
        'train': {'epochs': 2, 'batch_size': 8, 'holdout_fraction': 0.25},
        'finetune': {'epochs': 2, 'num_pairs': 6, 'batch_size': 8},
        'harvest_pairs': 8,
        'attack': {'epsilon': 0.1, 'learning_rate': 0.01, 'max_iter': 20},
        'attack_images': 3,
    }
    document.update(overrides)

    return document


def experiment_document(mode: str, out, **overrides) -> dict:
    """Seconds-scale experiment over 8×8 images; blackbox modes get a surrogate and the common one two members."""
    document = {
        'name': 'tiny',
        'mode': mode,
        'seed': 5,
        'output_dir': str(out),
        'datasets': {'target': {'count': 12}, 'surrogate': {'count': 12}, 'attack': {'count': 4}},
        'targets': [target_document()],
    }
    if mode != 'whitebox':
        document['surrogate_train'] = {'epochs': 1, 'batch_size': 8}
    if mode == 'blackbox-common':
        document['targets'].append(target_document(name='wide', cover_shape=(8, 8, 3), bits=4))
        document['common'] = {
            'io_shape': [8, 8, 3],
            'wm_bits': 3,
            'finetune': {'epochs': 2, 'num_pairs': 4, 'batch_size': 8},
            'attack': {'epsilon': 0.2, 'learning_rate': 0.01, 'max_iter': 20},
        }
    document.update(overrides)

    return document


@pytest.fixture
def tiny_config(tmp_path):
    def factory(mode: str = 'whitebox', out: str = 'run', **overrides) -> ExperimentConfig:
        return ExperimentConfig.model_validate(experiment_document(mode=mode, out=tmp_path / out, **overrides))

    return factory
