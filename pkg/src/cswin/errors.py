"""Exception hierarchy shared by the library and the command line."""


class CSWinError(Exception):
    """Base class for all errors raised by this package."""


class GeometryError(CSWinError, ValueError):
    """Shapes, strides or stripe widths that do not fit together."""


class FormatError(CSWinError, ValueError):
    """A tensor file or checkpoint that cannot be decoded."""


class ConfigError(CSWinError, ValueError):
    """An invalid model configuration or variant name."""
