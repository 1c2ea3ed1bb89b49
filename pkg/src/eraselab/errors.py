"""Exceptions shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class DivergenceError(RuntimeError):
    """A numeric quantity left the finite range during training or sampling."""


class ChecksumError(IOError):
    """A serialized payload failed its integrity check."""
