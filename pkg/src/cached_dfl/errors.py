"""Exception types shared across the simulator."""


class InvalidConfigError(ValueError):
    """A configuration value or combination of values is unusable."""


class DataFormatError(ValueError):
    """An input data file does not match its expected binary format."""
