"""Exception types shared across the package."""


class PartPoolError(Exception):
    """Base class for all library errors."""


class EmptyRect(PartPoolError):
    """A rectangle covers no map cells after clamping."""


class DimensionMismatch(PartPoolError):
    """Operand shapes are incompatible."""


class DegenerateRegion(PartPoolError):
    """A region (or one of its part cells) is empty after clamping."""


class ConfigInvalid(PartPoolError):
    """A configuration file failed schema validation."""


class NonFinite(PartPoolError):
    """A computation produced a non-finite value."""


class CheckpointError(PartPoolError):
    """A checkpoint file is malformed or incompatible."""
