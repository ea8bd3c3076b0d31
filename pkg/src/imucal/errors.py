"""Exception hierarchy.

Input problems (bad files, configs, arguments) derive from ``InputError``;
numerical and observability failures derive from ``NumericalError``. The CLI
maps the two families onto exit codes 1 and 2.
"""

from __future__ import annotations


class ImuCalError(Exception):
    """Base class for all package errors."""


class InputError(ImuCalError, ValueError):
    pass


class ConfigError(InputError):
    pass


class CsvFormatError(InputError):
    """Malformed measurement file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class StructuralError(InputError):
    """Measurement rows are parseable but do not form a dense timestep x IMU grid."""


class NumericalError(ImuCalError, ArithmeticError):
    pass


class DegenerateMotionError(NumericalError):
    """Motion does not excite enough axes to recover a relative orientation."""

    def __init__(self, message, score):
        self.score = score
        super().__init__(f"{message} (degeneracy score {score:.3g})")


class SingularInformationError(NumericalError):
    pass


class UnobservableError(NumericalError):
    """Calibration parameters are not observable from the given information.

    ``null_basis`` holds the (scaled-coordinate) eigenvectors whose
    eigenvalues fell below the observability threshold, one per column.
    """

    def __init__(self, message, null_basis=None):
        self.null_basis = null_basis
        super().__init__(message)


class UndefinedCorrelationError(NumericalError):
    pass
