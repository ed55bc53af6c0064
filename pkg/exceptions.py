"""Exception hierarchy shared by the simulator modules and the CLI."""

from typing import Optional


class NhSenseError(Exception):
    """Base class for every error raised by nh-sense."""


class ValidationError(NhSenseError, ValueError):
    """Invalid input. `path` is the dotted field path when known."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        prefix = f"{path}: " if path else ""
        suffix = f" (line {line})" if line is not None else ""
        super().__init__(f"{prefix}{message}{suffix}")
        self.detail = message

    def to_dict(self) -> dict:
        return {'type': 'validation', 'path': self.path, 'line': self.line, 'message': self.detail}


class NumericalError(NhSenseError, RuntimeError):
    """A solver, bracket or root-find failed."""

    def to_dict(self) -> dict:
        return {'type': 'numerical', 'message': str(self)}


class LatticeError(ValidationError):
    pass


class SpectralError(NumericalError):
    pass


class SensingError(ValidationError):
    pass


class CircuitError(ValidationError):
    pass


class MeasureError(ValidationError):
    pass


class ScenarioError(ValidationError):
    pass
