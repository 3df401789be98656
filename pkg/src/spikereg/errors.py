"""Exception types shared across the package."""


class SpikeRegError(Exception):
    """Base class for all spikereg errors."""


class ShapeError(SpikeRegError):
    """Operands or recorded traces do not fit together dimensionally."""


class NumericError(SpikeRegError):
    """A non-finite value appeared where the contract requires finite numbers."""


class DataError(SpikeRegError):
    """A dataset, manifest, or split request is unusable."""


class ConfigError(SpikeRegError):
    """An experiment configuration failed validation."""
