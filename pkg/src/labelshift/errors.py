"""Exception hierarchy shared across the package.

Every domain error derives from :class:`LabelShiftError` so callers (and the
benchmark harness, which records per-replication failures instead of dying)
can catch one base class.
"""

from __future__ import annotations


class LabelShiftError(Exception):
    """Base class for all domain errors raised by this package."""


class ShapeMismatch(LabelShiftError):
    """Array has the wrong shape for the requested operation."""


class DimensionMismatch(ShapeMismatch):
    """Two inputs that must share a dimension do not."""


class NegativeEntry(LabelShiftError):
    """A probability table contains an entry below -tolerance."""


class RowSumViolation(LabelShiftError):
    """A probability row sums too far from 1."""


class LabelRange(LabelShiftError):
    """A class label lies outside 1..k."""


class EmptyClass(LabelShiftError):
    """A class required by the estimator has no source samples."""


class ZeroSourceProp(LabelShiftError):
    """A source class proportion is zero where strict positivity is required."""


class ZeroReferenceProp(ZeroSourceProp):
    """The reference (last) class proportion is zero; the closing identity is undefined."""


class InvalidAlpha(LabelShiftError):
    """Dirichlet concentration parameter must be positive."""


class IndexOutOfRange(LabelShiftError):
    """Tweak class index outside 1..k."""


class UnsupportedClass(LabelShiftError):
    """Target distribution puts mass on a class absent from the resampling pool."""


class NumericalUnderflow(LabelShiftError):
    """All class log-densities underflowed; posterior undefined."""


class SingularMatrix(LabelShiftError):
    """Confusion matrix is numerically singular even after the ridge retry."""


class SingularSystem(SingularMatrix):
    """Moment-matching system matrix is numerically singular."""


class SingularIterationMatrix(SingularMatrix):
    """Fixed-point iteration matrix is numerically singular."""


class SingularJacobian(SingularMatrix):
    """Estimating-function Jacobian is numerically singular."""


class DegenerateDenominator(LabelShiftError):
    """Score-map denominator collapsed (all weights ~0 on a row's support)."""


class DegenerateFit(LabelShiftError):
    """Calibration fit is degenerate (e.g. a single observed class)."""


class EMMonotonicityError(LabelShiftError):
    """EM average log-likelihood decreased; indicates an implementation bug."""


class MissingLabel(LabelShiftError):
    """A source-domain sample (r=1) was passed without its label."""


class ZeroMass(LabelShiftError):
    """Reweighted posterior row has zero total mass."""


class ParseError(LabelShiftError):
    """A data file could not be parsed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MixedSchema(ParseError):
    """A table mixes probability (p_) and logit (z_) columns."""


class ConfigError(LabelShiftError):
    """Experiment configuration is invalid."""
