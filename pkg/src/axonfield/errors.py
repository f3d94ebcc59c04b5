"""Exception types mapped to CLI exit codes."""
from __future__ import annotations

from .params import ConfigError


class InputError(ValueError):
    """Malformed user input file; messages carry the line number."""


class NumericalError(RuntimeError):
    """Non-finite state or another numerical breakdown."""


class ConvergenceError(RuntimeError):
    """A nonlinear solve hit its iteration cap.

    ``diagnostics`` carries the residual history and the worst node so the
    caller can still write a report.
    """

    def __init__(self, message: str, diagnostics: dict | None = None, solution=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.solution = solution


__all__ = ["ConfigError", "InputError", "NumericalError", "ConvergenceError"]
