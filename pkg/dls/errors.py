"""Exception hierarchy shared by every dls module."""
from typing import Optional


class DLSError(Exception):
    """Base class for all errors raised by the dls package"""


class InvalidParameterError(DLSError, ValueError):
    """A physical or solver parameter is outside its valid range"""


class DegenerateTwistError(InvalidParameterError):
    """The twist-to-wrench map (and every twist margin) is undefined at v = 0"""


class DegenerateGravityError(InvalidParameterError):
    """The decomposed SOC margin divides by g_f^T B g_f, which is zero without tangential gravity"""


class InfeasibleGoalError(DLSError):
    """A start, waypoint or goal pose lies outside the palm workspace"""


class SlipResolutionError(DLSError):
    """The slip resolver could not balance the object within tolerance"""

    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message} (best residual {best_residual:.3e} N)")
        self.best_residual = best_residual


class ScenarioParseError(DLSError):
    """A scenario, suite or plan file failed strict parsing"""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.message = message
        self.field = field
        self.line = line


class PlanFileError(ScenarioParseError):
    """A plan file is inconsistent with the scenario it is simulated against"""
