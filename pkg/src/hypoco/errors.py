"""Exceptions shared across the package, mapped to CLI exit codes."""


class HypocoError(Exception):
    """Base class for package errors."""

    exit_code = 1


class InvariantViolation(HypocoError):
    """A structural identity or certified inequality failed its tolerance."""

    exit_code = 1


class ConfigError(HypocoError):
    """Bad user input (config file, CLI flags, potential string).

    Carries the full list of problems so callers can report everything at
    once instead of failing on the first bad key.
    """

    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class NumericalFailure(HypocoError):
    """A solver or quadrature could not reach the requested accuracy."""

    exit_code = 3
