"""Exception types shared across the pipeline, mapped to CLI exit codes."""


class ConfigError(Exception):
    """Invalid or infeasible configuration (exit code 2)."""


class DataError(Exception):
    """Invalid, degenerate, or missing data (exit code 3)."""


class DegenerateWindowError(DataError):
    """A measurement window too short or malformed to decompose."""


class ZeroMatrixError(DataError):
    """An all-zero snapshot block: no mode can be extracted."""


class InsufficientHistoryError(DataError):
    """A scenario does not cover the requested window range."""


class LabelingError(DataError):
    """A scenario record lacks the fields the labeling rules need."""


class UndefinedMetricError(DataError):
    """A metric is undefined for the given inputs (e.g. single-class AUROC)."""


class NumericalFailureError(Exception):
    """A numerical routine diverged or produced non-finite values (exit code 4)."""
