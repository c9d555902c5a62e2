"""Exception types shared across the package."""


class SplatMakeupError(Exception):
    """Base class for all package-specific errors."""


class DegenerateTriangle(SplatMakeupError):
    """A triangle's area fell below the safe threshold."""


class EmptyMesh(SplatMakeupError):
    """An operation required at least one triangle."""


class MismatchedInputs(SplatMakeupError):
    """Paired inputs disagree in count or dimensions."""


class UnfinalizedTexture(SplatMakeupError):
    """The UV texture must be finalized before querying."""


class MissingGuidance(SplatMakeupError):
    """No guidance image is available for the request."""


class DimensionMismatch(SplatMakeupError):
    """A decoded image does not match the expected resolution."""


class EmptyMask(SplatMakeupError):
    """A metric was asked to operate on an empty mask."""


class InsufficientViews(SplatMakeupError):
    """Not enough views to compute a cross-view statistic."""


class ConfigError(SplatMakeupError):
    """A run configuration file is malformed or inconsistent."""


class MissingAsset(SplatMakeupError):
    """A file referenced by the configuration does not exist."""


class NumericalError(SplatMakeupError):
    """A NaN or other numerical failure was detected mid-run."""
