"""Exception taxonomy shared across the package.

The CLI maps these onto stable exit codes: usage problems -> 1,
data problems -> 2, numeric failures -> 3.
"""


class SkeladError(Exception):
    """Base class for all package errors."""


class ContractViolation(SkeladError):
    """An operation was called with arguments violating its preconditions."""


class ConfigError(SkeladError):
    """Invalid configuration value or malformed config file."""


class DataError(SkeladError):
    """Malformed, inconsistent, or missing input data."""


class ParseError(DataError):
    """Unparseable record in an input file; message carries the line number."""


class TrainingError(SkeladError):
    """Numeric failure during optimization (NaN loss, non-finite gradient)."""


class ScoringError(SkeladError):
    """Numeric failure during inference/scoring."""


class EvalError(SkeladError):
    """Evaluation cannot proceed (e.g. labels contain a single class)."""


class DegeneratePartition(SkeladError):
    """A puzzle move was requested on a partition that admits none."""
