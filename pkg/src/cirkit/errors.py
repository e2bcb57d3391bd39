"""Exception hierarchy shared across the engine.

The CLI maps these onto exit codes: config/contract problems exit 2,
data problems exit 3, numeric failures exit 4.
"""


class CirkitError(Exception):
    """Base class for all engine errors."""


class ShapeError(CirkitError):
    """Tensor extents do not satisfy an operation's contract."""


class ContractError(CirkitError):
    """An API was called in a way its contract forbids."""


class ConfigError(CirkitError):
    """Invalid configuration value or file."""


class DataError(CirkitError):
    """Missing, malformed, or inconsistent data."""


class NumericError(CirkitError):
    """NaN/inf values or a failed numeric check."""


class DegenerateVectorError(NumericError):
    """Zero-norm vector where a direction is required."""
