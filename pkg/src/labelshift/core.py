"""Domain types shared by every module: label distributions, importance
weights, posterior tables, and the labeled-source / unlabeled-target data model.

Conventions
-----------
- Class labels are 1-based at every public surface (function arguments,
  files, reports) and 0-based in stored arrays (``labels0`` fields).
- The reference class for the reduced weight vector is the LAST class k;
  relabel your data if you want a different reference.
- All types are immutable after construction (backing arrays are marked
  read-only), so instances are safe to share across threads.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionMismatch,
    LabelRange,
    NegativeEntry,
    RowSumViolation,
    ShapeMismatch,
    ZeroReferenceProp,
)

INGEST_TOL = 1e-6    # simplex tolerance for external data
INTERNAL_TOL = 1e-12  # simplex tolerance for internally produced rows


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


class LabelDist:
    """A probability vector over k >= 2 classes (nonnegative, sums to 1)."""

    def __init__(self, probs, tol: float = INTERNAL_TOL):
        p = np.asarray(probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ShapeMismatch(f"label distribution needs a 1-d vector of length >= 2, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ShapeMismatch("label distribution has non-finite entries")
        if np.any(p < 0):
            raise NegativeEntry(f"negative probability {p.min()!r}")
        s = p.sum()
        if abs(s - 1.0) > tol:
            raise RowSumViolation(f"probabilities sum to {s!r}, not 1 within {tol!r}")
        self.probs = _readonly(p / s)

    @property
    def k(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __repr__(self) -> str:
        return f"LabelDist({np.array2string(self.probs, precision=6)})"


class Weights:
    """Importance weights omega_i = p_t(y=i) / p_s(y=i) with their source proportions.

    The estimating conventions tie the last entry to the first k-1 through
    sum_i omega_i * source_props_i = 1; use :func:`estimators.complete_weights`
    (or :meth:`from_reduced`) to construct weights that satisfy the identity
    exactly.  Direct construction accepts any finite vector because the
    confusion-matrix estimators can legitimately return weights that miss the
    identity by their solve/regularization error; ``constraint_gap`` reports
    the deviation.

    ``clipped`` records whether any entry is negative, i.e. whether the
    nonnegative view used for posterior adaptation (``omega_clipped``)
    differs from the raw estimate.
    """

    def __init__(self, omega, source_props: LabelDist, clipped: bool | None = None):
        w = np.asarray(omega, dtype=float)
        if w.ndim != 1:
            raise ShapeMismatch(f"omega must be a vector, got shape {w.shape}")
        if not isinstance(source_props, LabelDist):
            source_props = LabelDist(source_props)
        if w.size != source_props.k:
            raise DimensionMismatch(f"omega has {w.size} entries but source_props has {source_props.k}")
        if not np.all(np.isfinite(w)):
            raise ShapeMismatch("omega has non-finite entries")
        self.omega = _readonly(w)
        self.source_props = source_props
        self.clipped = bool(np.any(w < 0)) if clipped is None else bool(clipped)

    @classmethod
    def from_reduced(cls, omega_minus_k, source_props: LabelDist) -> "Weights":
        """Close the last entry via omega_k = (1 - sum_{i<k} p_i omega_i) / p_k."""
        if not isinstance(source_props, LabelDist):
            source_props = LabelDist(source_props)
        red = np.asarray(omega_minus_k, dtype=float)
        if red.ndim != 1 or red.size != source_props.k - 1:
            raise DimensionMismatch(
                f"reduced vector has {red.size} entries, expected {source_props.k - 1}")
        p = source_props.probs
        if p[-1] <= 0:
            raise ZeroReferenceProp("last-class proportion is zero; omega_k is undefined")
        last = (1.0 - red @ p[:-1]) / p[-1]
        return cls(np.append(red, last), source_props)

    @property
    def k(self) -> int:
        return self.omega.size

    @property
    def omega_minus_k(self) -> np.ndarray:
        return self.omega[:-1]

    @property
    def omega_clipped(self) -> np.ndarray:
        """Nonnegative view used for Bayes adjustment."""
        return np.maximum(self.omega, 0.0)

    @property
    def constraint_gap(self) -> float:
        """|sum_i omega_i p_i - 1|."""
        return float(abs(self.omega @ self.source_props.probs - 1.0))

    def __repr__(self) -> str:
        return f"Weights({np.array2string(self.omega, precision=6)}, clipped={self.clipped})"


class ProbMatrix:
    """An n x k table of per-sample class posteriors; every row on the simplex."""

    def __init__(self, values, tol: float = INGEST_TOL):
        v = np.asarray(values, dtype=float)
        if v.ndim != 2:
            raise ShapeMismatch(f"expected a 2-d table, got shape {v.shape}")
        n, k = v.shape
        if n < 1 or k < 2:
            raise ShapeMismatch(f"need n >= 1 rows and k >= 2 columns, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("probability table has non-finite entries")
        if np.any(v < -tol):
            i, j = np.argwhere(v < -tol)[0]
            raise NegativeEntry(f"entry ({i}, {j}) = {v[i, j]!r} below -{tol!r}")
        v = np.maximum(v, 0.0)
        sums = v.sum(axis=1)
        bad = np.abs(sums - 1.0) >= tol
        if np.any(bad):
            i = int(np.argmax(bad))
            raise RowSumViolation(f"row {i} sums to {sums[i]!r}, not 1 within {tol!r}")
        self.values = _readonly(v / sums[:, None])

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


class LogitMatrix:
    """An n x k table of unnormalized class scores (finite entries only)."""

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 2:
            raise ShapeMismatch(f"expected an n x k table with k >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeMismatch("logit table has non-finite entries")
        self.values = _readonly(v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


def _check_labels(labels, n: int, k: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.size != n:
        raise DimensionMismatch(f"labels have shape {y.shape}, expected ({n},)")
    if not np.issubdtype(y.dtype, np.integer):
        yf = np.asarray(labels, dtype=float)
        if np.any(yf != np.round(yf)):
            raise LabelRange("labels must be integers")
        y = yf.astype(int)
    if y.size and (y.min() < 1 or y.max() > k):
        raise LabelRange(f"labels must lie in 1..{k}, got range [{y.min()}, {y.max()}]")
    out = (y - 1).astype(np.int64)
    out.flags.writeable = False
    return out


class SourceSet:
    """Labeled source-domain predictions: an n x k prob/logit table plus labels.

    ``labels`` are accepted 1-based and stored 0-based in ``labels0``.
    """

    def __init__(self, probs_or_logits, labels):
        if not isinstance(probs_or_logits, (ProbMatrix, LogitMatrix)):
            probs_or_logits = ProbMatrix(probs_or_logits)
        self.table = probs_or_logits
        self.labels0 = _check_labels(labels, self.table.n, self.table.k)

    @property
    def n(self) -> int:
        return self.table.n

    @property
    def k(self) -> int:
        return self.table.k

    @property
    def probs(self) -> ProbMatrix:
        if not isinstance(self.table, ProbMatrix):
            raise ShapeMismatch("source set holds logits; calibrate or softmax them first")
        return self.table


class TargetSet:
    """Unlabeled target-domain predictions; labels, when known, are kept
    aside purely for evaluation."""

    def __init__(self, probs_or_logits, hidden_labels=None):
        if not isinstance(probs_or_logits, (ProbMatrix, LogitMatrix)):
            probs_or_logits = ProbMatrix(probs_or_logits)
        self.table = probs_or_logits
        self.hidden_labels0 = (
            None if hidden_labels is None
            else _check_labels(hidden_labels, self.table.n, self.table.k)
        )

    @property
    def m(self) -> int:
        return self.table.n

    @property
    def k(self) -> int:
        return self.table.k

    @property
    def probs(self) -> ProbMatrix:
        if not isinstance(self.table, ProbMatrix):
            raise ShapeMismatch("target set holds logits; calibrate or softmax them first")
        return self.table


def validate_prob_matrix(values, tol: float = INGEST_TOL) -> ProbMatrix:
    """Validate an n x k table as row-simplex data.

    Rows whose sum deviates from 1 by less than ``tol`` are renormalized;
    larger deviations raise :class:`RowSumViolation`.  Entries below ``-tol``
    raise :class:`NegativeEntry`; entries in (-tol, 0) are clipped to 0.
    """
    return ProbMatrix(values, tol=tol)


def class_proportions(labels, k: int) -> LabelDist:
    """Empirical proportions p_hat_i = #{y_j = i} / n for 1-based labels.

    Absent classes get proportion 0 (the estimators that cannot tolerate a
    zero proportion reject it themselves).
    """
    if k < 2:
        raise ShapeMismatch("need k >= 2 classes")
    y0 = _check_labels(labels, np.asarray(labels).size, k)
    if y0.size == 0:
        raise ShapeMismatch("need at least one label")
    counts = np.bincount(y0, minlength=k).astype(float)
    return LabelDist(counts / counts.sum())
