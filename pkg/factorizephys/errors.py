"""
Exception hierarchy for factorizephys.

Every exception raised on purpose by the package derives from
``FactorizePhysError`` and also from the builtin it refines, so callers that
catch ``ValueError`` or ``RuntimeError`` keep working.
"""

from typing import Optional


class FactorizePhysError(Exception):
    """Base class for all errors raised by factorizephys."""


class ShapeError(FactorizePhysError, ValueError):
    """Incompatible shapes, or an output axis that would be shorter than 1."""


class NonFiniteError(FactorizePhysError, FloatingPointError):
    """
    A forward operation produced NaN or Inf.

    Attributes:
        op: Name of the operation whose output was not finite.
    """

    def __init__(self, op: str, message: Optional[str] = None):
        self.op = op
        super().__init__(message or f"non-finite values produced by op '{op}'")


class AutogradError(FactorizePhysError, RuntimeError):
    """Misuse of the tape: non-scalar or detached loss, repeated backward."""


class NmfError(FactorizePhysError, ValueError):
    """Invalid factorization input (negative entries, rank too large)."""


class SignalError(FactorizePhysError, ValueError):
    """Signal cannot be evaluated (zero variance, sampling rate too low, empty band)."""


class FormatError(FactorizePhysError, ValueError):
    """Malformed FPV1/FPL1/checkpoint file."""


class SynthError(FactorizePhysError, ValueError):
    """Synthetic clip configuration cannot be rendered faithfully."""


class ConfigError(FactorizePhysError, ValueError):
    """Malformed configuration file or value."""


class TrainingError(FactorizePhysError, RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""


__all__ = [
    "FactorizePhysError",
    "ShapeError",
    "NonFiniteError",
    "AutogradError",
    "NmfError",
    "SignalError",
    "FormatError",
    "SynthError",
    "ConfigError",
    "TrainingError",
]
