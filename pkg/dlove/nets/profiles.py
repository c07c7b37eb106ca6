"""
Named technique profiles and fine-tuning presets.

Desk-scale profiles keep each technique's distinguishing traits at sizes a CPU trains in minutes;
full-scale profiles carry the published shapes and bit counts.
"""
from typing import Any, Dict, Tuple

from dlove.utils.enums import NoiseKind, WatermarkKind
from dlove.utils.exceptions import ConfigError
from dlove.utils.models import ArchitectureSpec, FinetuneBudget, NoiseSpec, TechniqueProfile

HIDDEN = 'hidden'
REDMARK = 'redmark'
PIMOG = 'pimog'
HIDING_IMAGES = 'hiding-images'

TECHNIQUES = (HIDDEN, REDMARK, PIMOG, HIDING_IMAGES)

DESK_ARCHITECTURE = ArchitectureSpec(encoder_channels=16, decoder_channels=16, decoder_blocks=7, fc_hidden=64,
                                     discriminator_channels=8)

ROBUSTNESS_NOISE = [
    NoiseSpec(kind=NoiseKind.gaussian_noise, strength=0.02),
    NoiseSpec(kind=NoiseKind.blur, strength=3),
    NoiseSpec(kind=NoiseKind.crop, strength=0.7),
    NoiseSpec(kind=NoiseKind.dropout, strength=0.3),
]

SCREEN_SHOOT_NOISE = [
    NoiseSpec(kind=NoiseKind.perspective_warp, strength=0.05),
    NoiseSpec(kind=NoiseKind.motion_blur, strength=3),
    NoiseSpec(kind=NoiseKind.color_jitter, strength=0.1),
]


def _profile(name: str, cover_shape: Tuple[int, int, int], bits: int) -> TechniqueProfile:
    if name == HIDDEN:
        return TechniqueProfile(name=name, cover_shape=cover_shape, watermark_kind=WatermarkKind.bits,
                                watermark_size=bits, has_discriminator=True, noise_layers=ROBUSTNESS_NOISE,
                                architecture=DESK_ARCHITECTURE)
    if name == REDMARK:
        return TechniqueProfile(name=name, cover_shape=cover_shape, watermark_kind=WatermarkKind.bits,
                                watermark_size=bits, architecture=DESK_ARCHITECTURE)
    if name == PIMOG:
        return TechniqueProfile(name=name, cover_shape=cover_shape, watermark_kind=WatermarkKind.bits,
                                watermark_size=bits, has_discriminator=True, noise_layers=SCREEN_SHOOT_NOISE,
                                screen_shoot_robust=True, architecture=DESK_ARCHITECTURE)

    return TechniqueProfile(name=name, cover_shape=cover_shape, watermark_kind=WatermarkKind.image,
                            watermark_size=cover_shape, architecture=DESK_ARCHITECTURE)


DESK_PROFILES: Dict[str, TechniqueProfile] = {
    HIDDEN: _profile(HIDDEN, (32, 32, 3), 16),
    REDMARK: _profile(REDMARK, (32, 32, 1), 8),
    PIMOG: _profile(PIMOG, (32, 32, 3), 16),
    HIDING_IMAGES: _profile(HIDING_IMAGES, (32, 32, 3), 0),
}

FULL_PROFILES: Dict[str, TechniqueProfile] = {
    HIDDEN: _profile(HIDDEN, (128, 128, 3), 30),
    REDMARK: _profile(REDMARK, (32, 32, 1), 16),
    PIMOG: _profile(PIMOG, (128, 128, 3), 30),
    HIDING_IMAGES: _profile(HIDING_IMAGES, (200, 200, 3), 0),
}

# optimal fine-tuning budget and perturbation limit per technique
FINETUNE_PRESETS: Dict[str, Tuple[FinetuneBudget, float]] = {
    REDMARK: (FinetuneBudget(epochs=40, num_pairs=200), 0.002),
    HIDDEN: (FinetuneBudget(epochs=60, num_pairs=300), 0.008),
    PIMOG: (FinetuneBudget(epochs=70, num_pairs=400), 0.02),
    HIDING_IMAGES: (FinetuneBudget(epochs=90, num_pairs=500), 0.1),
}


def get_profile(name: str, full_scale: bool = False) -> TechniqueProfile:
    profiles = FULL_PROFILES if full_scale else DESK_PROFILES
    if name not in profiles:
        raise ConfigError(f"Unknown technique '{name}', expected one of {', '.join(TECHNIQUES)}.")

    return profiles[name]


def get_finetune_preset(name: str) -> Tuple[FinetuneBudget, float]:
    if name not in FINETUNE_PRESETS:
        raise ConfigError(f"No fine-tuning preset for '{name}'.")

    return FINETUNE_PRESETS[name]


def expand_presets(document: Any) -> Any:
    """
    Resolve named presets in a raw experiment document.

    A target whose profile is a technique name gets that profile (full-scale when the document sets
    full_scale). A target without a finetune section gets the technique's preset budget, and an attack
    section without epsilon gets the technique's preset limit.
    """
    if not isinstance(document, dict) or not isinstance(document.get('targets'), list):
        return document

    full_scale = bool(document.get('full_scale', False))
    targets = []
    for target in document['targets']:
        if isinstance(target, dict):
            target = _expand_target(dict(target), full_scale)
        targets.append(target)

    return {**document, 'targets': targets}


def _expand_target(target: Dict[str, Any], full_scale: bool) -> Dict[str, Any]:
    if isinstance(target.get('profile'), str):
        target['profile'] = get_profile(target['profile'], full_scale=full_scale).model_dump(mode='json')

    profile = target.get('profile')
    name = profile.get('name') if isinstance(profile, dict) else None
    if name not in FINETUNE_PRESETS:
        return target

    budget, epsilon = get_finetune_preset(name)
    target.setdefault('finetune', budget.model_dump(mode='json'))
    if isinstance(target.get('attack'), dict):
        target['attack'] = {'epsilon': epsilon, **target['attack']}

    return target
