"""Exception hierarchy.

Two families: :class:`ValidationError` for bad inputs (CLI exit code 1) and
:class:`NumericalError` for failures of a numerical stage (CLI exit code 2).
"""

from __future__ import annotations


class SawkitError(Exception):
    """Base class. ``stage`` is filled in by pipelines that compose steps."""

    stage: str | None = None

    def with_stage(self, stage: str) -> "SawkitError":
        if self.stage is None:
            self.stage = stage
            if self.args:
                self.args = (f"[{stage}] {self.args[0]}",) + self.args[1:]
        return self


class ValidationError(SawkitError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class PoleError(ValidationError):
    pass


class InsufficientSpanError(ValidationError):
    def __init__(self, message: str, required_span: float | None = None):
        super().__init__(message)
        self.required_span = required_span


class ReportValidationError(ValidationError):
    pass


class NumericalError(SawkitError, RuntimeError):
    pass


class FitEvaluationError(NumericalError):
    def __init__(self, message: str, params=None):
        super().__init__(message)
        self.params = params


class OptimizerError(NumericalError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class RankDeficiencyError(NumericalError):
    pass


class DegenerateGeometryError(NumericalError):
    pass


class UnphysicalFitError(NumericalError):
    pass


class IdentifiabilityError(NumericalError):
    def __init__(self, message: str, parameters: tuple[str, ...] = ()):
        super().__init__(message)
        self.parameters = tuple(parameters)


class BootstrapInstabilityError(NumericalError):
    pass


class QuadratureError(NumericalError):
    def __init__(self, message: str, error_bound: float | None = None):
        super().__init__(message)
        self.error_bound = error_bound


class ModelTensionWarning(UserWarning):
    """Joint fit of shared parameters is much worse than the separate fits."""


class DegeneracyWarning(UserWarning):
    """Data cannot separate the requested parameters."""
