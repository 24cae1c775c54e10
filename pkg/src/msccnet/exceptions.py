"""Exception hierarchy shared by all msccnet modules.

Each class carries an ``exit_code`` so the command line can map failures to
stable process exit categories.
"""


class MSCCError(Exception):
    exit_code = 1


class ContractError(MSCCError, ValueError):
    """An operation received arguments outside its documented contract."""

    exit_code = 4


class ConfigError(MSCCError, ValueError):
    """Invalid or inconsistent configuration (divisibility, unknown keys...)."""

    exit_code = 2


class DataIOError(MSCCError, OSError):
    """Reading or writing a file failed; message includes the path."""

    exit_code = 3


class UndefinedMetricError(MSCCError, ValueError):
    exit_code = 5


class NonFiniteLossError(MSCCError, FloatingPointError):
    exit_code = 6
