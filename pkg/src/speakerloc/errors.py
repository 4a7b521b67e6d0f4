"""Exception hierarchy shared across the toolkit.

The CLI maps these to exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class SpeakerlocError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(SpeakerlocError):
    """Invalid configuration (bad values, inconsistent shapes, unknown keys)."""


class DataError(SpeakerlocError):
    """Unreadable, malformed, or insufficient input data."""


class EmptyInputError(DataError):
    """An input that parsed cleanly but contained nothing usable."""


class UndefinedMetricError(DataError):
    """A metric that is undefined for the given input (e.g. single-class ROC)."""


class NumericalError(SpeakerlocError):
    """Numerical failure during optimization (divergence, non-finite loss)."""
