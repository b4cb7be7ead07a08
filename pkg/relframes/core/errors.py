"""Exception hierarchy. Each class carries the process exit code the CLI maps it to."""

from typing import Optional


class RelframesError(Exception):
    exit_code = 1


class InputError(RelframesError):
    """A precondition on the caller's input failed."""

    exit_code = 2


class DimensionMismatch(InputError):
    pass


class ConfigError(InputError):
    pass


class SchemeFileError(InputError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(f"{prefix}{message}")


class TruncationError(InputError):
    def __init__(self, message: str, required_cutoff: int):
        self.required_cutoff = required_cutoff
        super().__init__(f"{message} (required cutoff >= {required_cutoff})")


class InvariantViolation(RelframesError):
    """A checked identity or inequality failed during a run."""

    exit_code = 1
