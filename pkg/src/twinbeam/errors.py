"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration / validation
problems exit 1, file-format and I/O problems exit 2, numerical failures
(fit non-convergence, degenerate statistics) exit 3.
"""


class TwinbeamError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(TwinbeamError):
    """Invalid, missing or out-of-range configuration values."""


class FormatError(TwinbeamError):
    """Malformed on-disk data (bad header, schema mismatch, broken record)."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericalError(TwinbeamError):
    """Base class for numerical failures."""


class UndefinedCorrelationError(NumericalError):
    """Correlation coefficient requested for a distribution with zero variance."""


class FitError(NumericalError):
    """Base class for peak-fit failures."""


class NoPeakError(FitError):
    """Profile has no resolvable peak above its baseline."""


class FitConvergenceError(FitError):
    """Iterative least squares did not converge."""

    def __init__(self, message: str, iterations: int, residual_norm: float):
        super().__init__(
            f"{message} (iterations={iterations}, residual_norm={residual_norm:.6g})"
        )
        self.iterations = iterations
        self.residual_norm = residual_norm
