from datetime import datetime
from typing import Dict, List, Optional, Tuple, Union, Annotated, Literal

from pydantic import BaseModel, Field, ConfigDict, field_validator, model_validator

from dlove.utils.enums import (WatermarkKind, NoiseKind, SeedPolicy, AttackLoss, Objective, PaddingPolicy, Mode)
from dlove.utils.exceptions import ConfigError, NoiseSpecError
from dlove.utils.scripts import MAX_SEED

seedValue = Annotated[int, Field(
    title="Seed",
    description="64-bit unsigned seed; every stochastic operation is a pure function of it",
    ge=0,
    le=MAX_SEED,
    examples=[1234]
)]

imageShape = Annotated[Tuple[int, int, int], Field(
    title="Image Shape",
    description="(height, width, channels), channels in {1, 3}",
    examples=[(32, 32, 1)]
)]

epsilonValue = Annotated[float, Field(
    title="Perturbation Limit",
    description="L-infinity budget of the crafted perturbation",
    examples=[0.05]
)]

learningRate = Annotated[float, Field(
    title="Learning Rate",
    description="Adam step size",
    gt=0,
    examples=[0.001]
)]

fraction = Annotated[float, Field(
    title="Fraction",
    description="Share of items held out for accuracy reporting",
    ge=0,
    lt=1,
    examples=[0.1]
)]


def validate_image_shape(shape: Tuple[int, int, int]) -> Tuple[int, int, int]:
    height, width, channels = shape
    if height <= 0 or width <= 0:
        raise ConfigError(f"Image dimensions must be positive, got {shape}.")
    if channels not in (1, 3):
        raise ConfigError(f"Images carry 1 or 3 channels, got {channels}.")

    return tuple(shape)


# (low, high, low_inclusive); kernel kinds additionally require odd integral strength
NOISE_BOUNDS: Dict[NoiseKind, Tuple[float, float, bool]] = {
    NoiseKind.gaussian_noise: (0.0, 0.5, True),
    NoiseKind.blur: (1.0, 9.0, True),
    NoiseKind.crop: (0.0, 1.0, False),
    NoiseKind.perspective_warp: (0.0, 0.25, True),
    NoiseKind.motion_blur: (1.0, 9.0, True),
    NoiseKind.color_jitter: (0.0, 0.5, True),
    NoiseKind.dropout: (0.0, 0.9, True),
    NoiseKind.jpeg_approx: (0.0, 0.25, True),
}

KERNEL_NOISE = (NoiseKind.blur, NoiseKind.motion_blur)

SCREEN_SHOOT_NOISE = (NoiseKind.perspective_warp, NoiseKind.motion_blur, NoiseKind.color_jitter)


def check_noise_spec(kind: NoiseKind, strength: float) -> None:
    low, high, low_inclusive = NOISE_BOUNDS[kind]
    too_low = strength < low if low_inclusive else strength <= low
    if too_low or strength > high:
        bracket = "[" if low_inclusive else "("
        raise NoiseSpecError(f"Strength {strength} of '{kind.value}' is outside {bracket}{low}, {high}].")
    if kind in KERNEL_NOISE and (strength != int(strength) or int(strength) % 2 == 0):
        raise NoiseSpecError(f"Kernel size of '{kind.value}' must be an odd integer, got {strength}.")


class NoiseSpec(BaseModel):
    """
    One differentiable distortion inserted between encoder and decoder while training

    Strength meaning per kind: gaussian-noise std, blur/motion-blur kernel size, crop keep-fraction,
    perspective-warp corner displacement, color-jitter amplitude, dropout probability,
    jpeg-approx quantization step.
    """

    model_config = ConfigDict(frozen=True)

    kind: NoiseKind
    strength: float
    seed_policy: SeedPolicy = SeedPolicy.fresh_per_batch
    seed: seedValue = 0

    @model_validator(mode='after')
    def validate_strength(self):
        check_noise_spec(kind=self.kind, strength=self.strength)

        return self


class ArchitectureSpec(BaseModel):
    """
    Widths of the toy networks; the same builders serve full-size and gradient-check sized pipelines
    """

    model_config = ConfigDict(frozen=True)

    encoder_channels: Annotated[int, Field(ge=1, examples=[16])] = 16
    decoder_channels: Annotated[int, Field(ge=1, examples=[16])] = 16
    decoder_blocks: Annotated[int, Field(ge=3, examples=[7])] = 7
    fc_hidden: Annotated[int, Field(ge=1, examples=[64])] = 64
    discriminator_channels: Annotated[int, Field(ge=1, examples=[8])] = 8


class TechniqueProfile(BaseModel):
    """
    Declarative description of one watermarking technique at some scale

    example: { "name": "redmark", "cover_shape": [32, 32, 1], "watermark_kind": "bits", "watermark_size": 8 }
    """

    model_config = ConfigDict(frozen=True)

    name: Annotated[str, Field(min_length=1, pattern=r'^[a-zA-Z0-9_-]+$', examples=['hidden'])]
    cover_shape: imageShape
    watermark_kind: WatermarkKind
    watermark_size: Union[int, Tuple[int, int, int]]
    has_discriminator: bool = False
    noise_layers: List[NoiseSpec] = []
    screen_shoot_robust: bool = False
    architecture: ArchitectureSpec = ArchitectureSpec()

    @field_validator('cover_shape', mode='after')
    def validate_cover_shape(cls, cover_shape):
        return validate_image_shape(shape=cover_shape)

    @model_validator(mode='after')
    def validate_watermark(self):
        if self.watermark_kind == WatermarkKind.bits:
            if not isinstance(self.watermark_size, int) or self.watermark_size < 1:
                raise ConfigError(f"Profile '{self.name}': bit watermarks need a positive bit count.")
        else:
            if isinstance(self.watermark_size, int):
                raise ConfigError(f"Profile '{self.name}': image watermarks need an (h, w, c) size.")
            validate_image_shape(shape=self.watermark_size)

        if self.screen_shoot_robust:
            kinds = {spec.kind for spec in self.noise_layers}
            missing = [kind.value for kind in SCREEN_SHOOT_NOISE if kind not in kinds]
            if missing:
                raise ConfigError(f"Profile '{self.name}' is screen-shoot robust but lacks {', '.join(missing)}.")

        return self

    @property
    def bit_count(self) -> int:
        if self.watermark_kind != WatermarkKind.bits:
            raise ConfigError(f"Profile '{self.name}' carries image watermarks.")

        return self.watermark_size


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    image_mse: float = 1.0
    perceptual: float = 0.1
    residual_l2: float = 0.01
    watermark: float = 1.0
    adversarial: float = 0.001

    @model_validator(mode='after')
    def validate_weights(self):
        for name, weight in self.model_dump().items():
            if weight < 0:
                raise ConfigError(f"Loss weight '{name}' must be non-negative, got {weight}.")
        if self.watermark <= 0:
            raise ConfigError("The watermark loss weight must be positive.")

        return self


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int
    batch_size: Annotated[int, Field(ge=1)] = 32
    learning_rate: learningRate = 1e-3
    loss_weights: LossWeights = LossWeights()
    holdout_fraction: fraction = 0.1
    seed: seedValue = 0

    @field_validator('epochs', mode='before')
    def validate_epochs(cls, epochs):
        if epochs is None or int(epochs) < 1:
            raise ConfigError(f"Training needs at least one epoch, got {epochs}.")

        return epochs


class FinetuneBudget(BaseModel):
    """
    Epochs and harvested pairs spent adapting a surrogate decoder to a target
    """

    model_config = ConfigDict(frozen=True)

    epochs: int = 100
    num_pairs: int = 500
    learning_rate: learningRate = 1e-4
    batch_size: Annotated[int, Field(ge=1)] = 32
    holdout_fraction: fraction = 0.1
    seed: seedValue = 0

    @model_validator(mode='after')
    def validate_budget(self):
        if self.epochs < 1:
            raise ConfigError(f"Fine-tuning needs at least one epoch, got {self.epochs}.")
        if self.num_pairs < 1:
            raise ConfigError(f"Fine-tuning needs at least one pair, got {self.num_pairs}.")

        return self


class CommonSurrogateSpec(BaseModel):
    """
    One cross-resolution surrogate shared by several bit-string targets
    """

    model_config = ConfigDict(frozen=True)

    io_shape: imageShape = (64, 64, 3)
    wm_bits: Annotated[int, Field(ge=1, examples=[10])] = 10
    member_targets: List[TechniqueProfile]
    padding_policy: PaddingPolicy = PaddingPolicy.zero_pad

    @field_validator('io_shape', mode='after')
    def validate_io_shape(cls, io_shape):
        return validate_image_shape(shape=io_shape)

    @model_validator(mode='after')
    def validate_members(self):
        if not self.member_targets:
            raise ConfigError("A common surrogate needs at least one member target.")
        for member in self.member_targets:
            if member.watermark_kind != WatermarkKind.bits:
                raise ConfigError(f"Member '{member.name}' uses image watermarks; only bit strings can share a surrogate.")
            if member.bit_count < self.wm_bits and self.padding_policy == PaddingPolicy.reject:
                raise ConfigError(f"Member '{member.name}' has {member.bit_count} bits < {self.wm_bits} and padding is rejected.")

        return self


class SuccessPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    removal_threshold: Annotated[float, Field(ge=0, le=1)] = 0.25
    image_success_threshold: Annotated[float, Field(gt=0)] = 0.05
    image_success_cosine: Annotated[float, Field(ge=-1, le=1)] = 0.9
    image_removal_cosine: Annotated[float, Field(ge=-1, le=1)] = 0.5
    pyramid_seed: seedValue = 0


class Escalation(BaseModel):
    model_config = ConfigDict(frozen=True)

    epsilon_max: epsilonValue = 0.5
    steps: Annotated[int, Field(ge=2)] = 3


class AttackConfig(BaseModel):
    """
    Crafting-loop settings

    example: { "epsilon": 0.05, "learning_rate": 0.001, "max_iter": 5000, "loss": "mse" }
    """

    model_config = ConfigDict(frozen=True)

    epsilon: epsilonValue
    learning_rate: learningRate = 1e-3
    max_iter: int = 5000
    loss: AttackLoss = AttackLoss.mse
    objective: Objective = Objective.whitebox_full
    escalation: Optional[Escalation] = None
    clamp_pixels: bool = True
    quantize_before_verify: bool = False
    early_exit: bool = True
    check_every: Annotated[int, Field(ge=1)] = 1
    success: SuccessPolicy = SuccessPolicy()
    write_images: bool = False
    residual_gain: Annotated[float, Field(gt=0)] = 10.0
    seed: seedValue = 0

    @model_validator(mode='after')
    def validate_attack(self):
        if self.epsilon <= 0:
            raise ConfigError(f"Perturbation limit must be positive, got {self.epsilon}.")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be at least 1, got {self.max_iter}.")
        if self.escalation is not None and self.escalation.epsilon_max < self.epsilon:
            raise ConfigError(f"epsilon_max {self.escalation.epsilon_max} is below epsilon {self.epsilon}.")

        return self


class SyntheticSpec(BaseModel):
    """
    Seeded mixture of gradients, noise textures and geometric shapes
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal['synthetic'] = 'synthetic'
    gradients: bool = True
    textures: bool = True
    max_shapes: Annotated[int, Field(ge=0)] = 3
    texture_cells: Annotated[int, Field(ge=1)] = 4


class DatasetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: Union[SyntheticSpec, str] = SyntheticSpec()
    count: Annotated[int, Field(examples=[2000])]
    allow_replacement: bool = False

    @field_validator('count', mode='before')
    def validate_count(cls, count):
        if count is None or int(count) < 1:
            raise ConfigError(f"Datasets need at least one item, got {count}.")

        return count


class TargetConfig(BaseModel):
    """
    One attacked technique: its profile, how the toy target is trained, and how it is attacked
    """

    model_config = ConfigDict(frozen=True)

    profile: TechniqueProfile
    train: TrainConfig
    finetune: FinetuneBudget = FinetuneBudget()
    attack: AttackConfig
    harvest_pairs: Annotated[int, Field(ge=1)] = 500
    attack_images: Annotated[int, Field(ge=1)] = 100


class CommonSurrogateConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    io_shape: imageShape = (64, 64, 3)
    wm_bits: Annotated[int, Field(ge=1)] = 10
    padding_policy: PaddingPolicy = PaddingPolicy.zero_pad
    # pairs are per member; the pooled set is num_pairs times the member count
    finetune: FinetuneBudget = FinetuneBudget(epochs=90, num_pairs=500)
    attack: AttackConfig = AttackConfig(epsilon=0.3, max_iter=8000)


class ExperimentConfig(BaseModel):
    """
    Whole experiment: datasets, targets, the surrogate recipe and the mode's stage graph
    """

    model_config = ConfigDict(frozen=True)

    name: Annotated[str, Field(min_length=1, pattern=r'^[a-zA-Z0-9_.-]+$')] = 'experiment'
    mode: Mode
    seed: seedValue = 0
    scale: Annotated[float, Field(gt=0)] = 1.0
    full_scale: bool = False
    output_dir: Optional[str] = None
    datasets: Dict[str, DatasetSpec]
    target_dataset: str = 'target'
    surrogate_dataset: str = 'surrogate'
    attack_dataset: str = 'attack'
    targets: List[TargetConfig]
    surrogate_train: Optional[TrainConfig] = None
    common: Optional[CommonSurrogateConfig] = None
    pyramid_seed: seedValue = 0

    @model_validator(mode='after')
    def validate_experiment(self):
        if not self.targets:
            raise ConfigError("An experiment needs at least one target.")

        names = [target.profile.name for target in self.targets]
        if len(set(names)) != len(names):
            raise ConfigError(f"Target profile names must be unique, got {names}.")

        required = [self.target_dataset, self.attack_dataset]
        if self.mode != Mode.whitebox:
            required.append(self.surrogate_dataset)
            if self.surrogate_train is None:
                raise ConfigError(f"Mode '{self.mode.value}' needs a surrogate_train section.")
        for dataset in required:
            if dataset not in self.datasets:
                raise ConfigError(f"Dataset '{dataset}' is referenced but not defined.")

        if self.mode == Mode.blackbox_common:
            if self.common is None:
                raise ConfigError("Mode 'blackbox-common' needs a common section.")
            for target in self.targets:
                if target.profile.watermark_kind != WatermarkKind.bits:
                    raise ConfigError(f"Target '{target.profile.name}' uses image watermarks; "
                                      f"the common surrogate only serves bit strings.")

        return self


class MetricRecord(BaseModel):
    psnr: float
    ssim: float
    lpips_proxy: float
    mse: float
    ber: Optional[float] = None
    cosine: float


class AttackRecord(BaseModel):
    """
    One line of an attack results file
    """

    input_id: int
    technique: str
    epsilon_used: float
    iterations: int
    attempts: int
    success: bool
    removal: bool
    surrogate_success: Optional[bool] = None
    ber: Optional[float] = None
    ber_alpha: Optional[float] = None
    alpha_beta_cosine: float
    metrics: MetricRecord


class ReportRow(BaseModel):
    technique: str
    epoch: Optional[int] = None
    image: Optional[int] = None
    pert_limit: float
    psnr: float
    ssim: float
    lpips_proxy: float
    mse: float
    asr: Annotated[float, Field(ge=0, le=100)]
    removal_rate: Annotated[float, Field(ge=0, le=100)]
    count: Annotated[int, Field(ge=1)]


class AggregateReport(BaseModel):
    rows: List[ReportRow]
    conventions: Dict[str, str] = {}


class RunManifest(BaseModel):
    config_hash: str
    config: dict
    artifacts: Dict[str, str]
    started_at: datetime
    finished_at: datetime
    version: str


class ErrorResponse(BaseModel):
    """
    Error rendered to stderr before the CLI exits with a non-zero code

    example: { "reason": "<why the command could not be completed>" }
    """

    reason: Annotated[str, Field(
        title="Reason",
        description="Why the command could not be completed",
        min_length=1
    )]
