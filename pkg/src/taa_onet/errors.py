"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: configuration problems exit 2, numerical
failures exit 3, file/format problems exit 4.
"""


class TaaOnetError(Exception):
    """Base class for all package errors."""


class ParameterError(TaaOnetError, ValueError):
    """Invalid or non-physical input parameters."""


class DomainError(ParameterError):
    """Argument outside the mathematical domain of a function."""


class ConfigError(TaaOnetError, ValueError):
    """Bad run configuration (unknown key, wrong type, missing file)."""


class NumericalError(TaaOnetError, ArithmeticError):
    """A numerical procedure failed (factorization, overflow, non-finite loss)."""


class ConvergenceError(NumericalError):
    """An iterative solver did not find a root inside its search region."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class StructuralError(TaaOnetError, ValueError):
    """Network layers or model inputs do not fit together."""


class FormatError(TaaOnetError, OSError):
    """A serialized file is truncated, corrupt, or has unexpected dimensions."""
