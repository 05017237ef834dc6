"""Exception hierarchy.

Every exception carries the process exit code the CLI maps it to:
2 for configuration problems, 3 for bad data, 4 for numeric failures.
"""


class StganError(Exception):
    exit_code = 1


class ConfigError(StganError):
    exit_code = 2


class DataError(StganError):
    exit_code = 3


class FitError(DataError):
    pass


class DomainError(DataError, ValueError):
    pass


class GridError(DataError):
    pass


class MetricError(DataError):
    pass


class SplitError(DataError):
    pass


class FormatError(DataError):
    """Unreadable checkpoint or data file; ``section`` names the failed part."""

    def __init__(self, message, section=None):
        super().__init__(message if section is None else f"{section}: {message}")
        self.section = section


class ContractError(StganError, ValueError):
    """A caller broke an API precondition (shapes, call order, counts)."""

    exit_code = 2


class NumericError(StganError):
    exit_code = 4


class TrainingError(NumericError):
    def __init__(self, message, tick=None):
        super().__init__(message if tick is None else f"{message} (tick {tick})")
        self.tick = tick
