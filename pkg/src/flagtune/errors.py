"""Exception hierarchy shared across flagtune modules."""

from __future__ import annotations


class FlagtuneError(Exception):
    """Base class for all errors raised by flagtune."""


class CatalogError(FlagtuneError, ValueError):
    """Malformed flag catalog, or a chromosome/rule that does not fit the catalog."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsatisfiableConstraints(FlagtuneError):
    """Repair could not reach a valid chromosome by turning flags off."""

    def __init__(self, message: str, rules=()):
        super().__init__(message)
        self.rules = list(rules)


class ConfigError(FlagtuneError, ValueError):
    pass


class ExtractionError(FlagtuneError, ValueError):
    pass


class InfrastructureError(FlagtuneError):
    """Failure of the tuning machinery itself (missing compiler, unreadable output...).

    Distinct from an ordinary compile error, which is a scored outcome.
    """


class UndefinedInput(FlagtuneError, ValueError):
    pass


class MatchingError(FlagtuneError, ValueError):
    pass


class GraphParseError(FlagtuneError, ValueError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class StoreError(FlagtuneError):
    pass


class IntegrityError(StoreError):
    pass


class CorruptLog(StoreError):
    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingHeader(StoreError):
    pass


class HeaderMismatch(StoreError):
    def __init__(self, diffs: dict[str, tuple[str, str]]):
        self.diffs = diffs
        lines = [f"  {k}: stored={a!r} expected={b!r}" for k, (a, b) in diffs.items()]
        super().__init__("session header mismatch:\n" + "\n".join(lines))
