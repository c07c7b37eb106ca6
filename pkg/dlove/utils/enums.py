from enum import Enum


class WatermarkKind(str, Enum):
    bits = "bits"
    image = "image"


class Split(str, Enum):
    train = "train"
    test = "test"
    attack_pairs = "attack-pairs"


class NoiseKind(str, Enum):
    gaussian_noise = "gaussian-noise"
    blur = "blur"
    crop = "crop"
    perspective_warp = "perspective-warp"
    motion_blur = "motion-blur"
    color_jitter = "color-jitter"
    dropout = "dropout"
    jpeg_approx = "jpeg-approx"


class SeedPolicy(str, Enum):
    fresh_per_batch = "fresh-per-batch"
    fixed = "fixed"


class AttackLoss(str, Enum):
    mse = "mse"
    l1 = "l1"


class Objective(str, Enum):
    whitebox_full = "whitebox-full"
    algorithm_literal = "algorithm-literal"
    blackbox = "blackbox"


class PaddingPolicy(str, Enum):
    reject = "reject"
    zero_pad = "zero-pad"


class Mode(str, Enum):
    whitebox = "whitebox"
    blackbox_per_target = "blackbox-per-target"
    blackbox_common = "blackbox-common"


class SweepAxis(str, Enum):
    finetune_epochs = "finetune-epochs"
    finetune_pairs = "finetune-pairs"
    epsilon = "epsilon"


class ReportFormat(str, Enum):
    csv = "csv"
    text_table = "text-table"
