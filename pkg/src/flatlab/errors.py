"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid experiment or run configuration."""


class DivergenceError(RuntimeError):
    """A forward or backward pass produced non-finite values."""
