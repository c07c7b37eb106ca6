from typing import Optional


class DloveException(Exception):
    """
    Base error of the toolkit.

    exit_code follows the CLI contract: 1 for configuration problems, 2 for anything
    that fails while a stage is executing. Subclasses are raised from pydantic validators
    too, so none of them derives from ValueError (pydantic would swallow it into a
    ValidationError).
    """

    exit_code: int = 2

    def __init__(self, detail: str, exit_code: Optional[int] = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(DloveException):
    exit_code = 1


class StageError(DloveException):
    def __init__(self, stage: str, detail: str):
        super().__init__(f"Stage '{stage}' failed: {detail}")
        self.stage = stage


class ImageReadError(DloveException):
    pass


class UnsupportedBitDepthError(DloveException):
    pass


class CorruptImageError(DloveException):
    pass


class ArtifactWriteError(DloveException):
    pass


class ImageWriteError(ArtifactWriteError):
    pass


class ShapeMismatchError(DloveException):
    pass


class WatermarkKindError(DloveException):
    pass


class DatasetError(DloveException):
    pass


class InvalidProfileError(DloveException):
    exit_code = 1


class NoiseSpecError(DloveException):
    exit_code = 1


class TrainingDivergedError(DloveException):
    pass


class InsufficientPairsError(DloveException):
    pass


class CheckpointIntegrityError(DloveException):
    pass


class AttackDivergedError(DloveException):
    pass


class ReportError(DloveException):
    pass
