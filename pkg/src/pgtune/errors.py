"""Exception types shared across the package."""

from __future__ import annotations


class PgtuneError(Exception):
    """Base class for all errors raised by pgtune."""


class UnknownRank(PgtuneError):
    pass


class Deadlock(PgtuneError):
    pass


class RankPanic(PgtuneError):
    def __init__(self, rank: int, cause: BaseException):
        super().__init__(f"rank {rank} failed: {cause!r}")
        self.rank = rank
        self.cause = cause


class OpDatatypeMismatch(PgtuneError):
    pass


class SizeMismatch(PgtuneError):
    pass


class RootOutOfRange(PgtuneError):
    pass


class KindMismatch(PgtuneError):
    pass


class InsufficientScratch(PgtuneError):
    pass


class DegenerateSamples(PgtuneError):
    pass


class NonConvergence(PgtuneError):
    pass


class EmptyInput(PgtuneError):
    pass


class MissingDefault(PgtuneError):
    pass


class ParseError(PgtuneError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)
        self.line = line
        self.path = path


class InvariantViolation(PgtuneError):
    pass


class ConfigError(PgtuneError):
    pass


class UnknownCollective(ConfigError):
    pass


class UnknownMockup(ConfigError):
    pass


class KeyMismatch(PgtuneError):
    pass
