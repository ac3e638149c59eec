"""Exception hierarchy shared by the solver, the scenario loader and the CLI.

Every error carries the process exit code the CLI reports for it.
"""
from typing import Optional

EXIT_OK = 0
EXIT_SOLVER_FAILURE = 1
EXIT_VERIFICATION_FAILURE = 2
EXIT_INPUT_ERROR = 3


class PollutionGameError(Exception):
    exit_code = EXIT_SOLVER_FAILURE


class GeometryError(PollutionGameError, ValueError):
    """Raised when a domain, grid or region partition cannot be built."""
    exit_code = EXIT_INPUT_ERROR


class ScenarioError(PollutionGameError, ValueError):
    """Raised when a scenario file cannot be parsed or fails validation.

    Args:
        message: What is wrong.
        source: File the scenario came from, if any.
        line: 1-based line of the offending YAML node, if known.
        field: Dotted path of the offending field, e.g. ``coefficients.phi[0]``.
    """
    exit_code = EXIT_INPUT_ERROR

    def __init__(self, message: str, source: Optional[str] = None,
                 line: Optional[int] = None, field: Optional[str] = None):
        self.source = source
        self.line = line
        self.field = field
        location = ""
        if source:
            location = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            location = f"line {line}: "
        prefix = f"{field}: " if field else ""
        super().__init__(f"{location}{prefix}{message}")


class SolverError(PollutionGameError, RuntimeError):
    """Raised when a linear solve or a time integration fails.

    The ``report`` attribute holds the ``SolveReport`` of the failed solve, if any.
    """
    exit_code = EXIT_SOLVER_FAILURE

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SignViolationError(SolverError):
    """Raised when an adjoint field is not strictly negative (broken maximum principle)."""


class VerificationError(PollutionGameError):
    exit_code = EXIT_VERIFICATION_FAILURE
