"""Error taxonomy shared across the package.

Plain bad arguments raise ValueError; the classes below mark conditions a
caller may want to handle specifically (retry, fall back, surface to a UI).
"""


class KimodoError(Exception):
    """Base class for package-specific errors."""


class InvalidRotationError(KimodoError):
    """A rotation matrix failed the orthonormality / determinant check."""


class DegenerateHeadingError(KimodoError):
    """Hip joints are (near) vertically coincident; heading is undefined."""


class ConfigError(KimodoError):
    """Inconsistent or mismatched configuration (checkpoints, resume, CLI)."""


class TrainingFault(KimodoError):
    """Non-finite values encountered during a training step."""


class UndefinedMetricError(KimodoError):
    """A metric was requested on an empty case set."""
