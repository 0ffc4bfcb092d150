"""Exception hierarchy. Each class carries the CLI exit status it maps to."""


class IcctError(Exception):
    exit_code = 1


class UsageError(IcctError):
    exit_code = 2


class DataError(IcctError):
    exit_code = 3


class ConfigError(IcctError):
    exit_code = 4


class NumericError(IcctError):
    exit_code = 5


class RunError(IcctError):
    """A training run failed part way; ``partial`` holds whatever was finished."""

    exit_code = 6

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial
