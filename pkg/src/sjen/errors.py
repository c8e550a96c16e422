"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError (and its
subclasses) -> 2, NumericError -> 3.
"""


class SjenError(Exception):
    """Base class for package errors."""


class ConfigError(SjenError):
    """Invalid configuration file, option, or command usage."""


class DataError(SjenError):
    """Malformed or inconsistent input data (files, manifests, signals)."""


class ShapeError(DataError):
    """Tensor / grid shape disagreement."""


class WavFormatError(DataError):
    """WAV container problems; message identifies the specific defect."""


class NumericError(SjenError):
    """Non-finite values where finite numbers are required."""
