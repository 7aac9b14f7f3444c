"""Exception types shared across the package."""


class SelfSegError(Exception):
    """Base class for all selfseg errors."""


class PgmFormatError(SelfSegError):
    """Malformed or unsupported PGM file."""


class DimensionError(SelfSegError):
    """Image dimensions outside the supported range, or shape mismatch."""


class ManifestError(SelfSegError):
    """Invalid dataset manifest."""


class ConfigError(SelfSegError):
    """Invalid configuration value or file."""


class DegenerateInputError(SelfSegError):
    """Input has no structure to work with (e.g. all pixels identical)."""


class CheckpointError(SelfSegError):
    """Corrupt or incompatible parameter checkpoint."""


class TrainingSetError(SelfSegError):
    """No usable training images."""


class DivergenceError(SelfSegError):
    """Training produced a non-finite loss."""

    def __init__(self, level: int, message: str):
        super().__init__(message)
        self.level = level
