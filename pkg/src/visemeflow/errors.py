"""Exception types shared across the package."""


class VisemeflowError(Exception):
    """Base class for all package errors."""

    category = "runtime"


class AudioFormatError(VisemeflowError):
    """Raised when input audio violates the supported format."""

    category = "audio-format"


class DataFormatError(VisemeflowError):
    """Raised for malformed dataset files or checkpoints."""

    category = "data-format"


class ShapeError(VisemeflowError):
    """Raised when array dimensions do not match a layer or loss contract."""

    category = "shape"


class ConfigError(VisemeflowError):
    """Raised for invalid configuration values."""

    category = "config"
