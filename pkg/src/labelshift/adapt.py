"""Applying estimated weights to classifier posteriors and scoring the result.

Adjustment reweights each posterior row by the (nonnegative view of the)
importance weights and renormalizes; metrics are the per-class mean squared
weight error (on the raw, unclipped estimates) and the accuracy gain of the
adapted predictions over the raw argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ProbMatrix, Weights
from .errors import DimensionMismatch, ShapeMismatch, ZeroMass

_MIN_MASS = 1e-300


@dataclass(frozen=True)
class AdaptationReport:
    raw_accuracy: float
    adapted_accuracy: float
    delta_accuracy: float
    weight_mse: float | None = None  # absent when the true weights are unknown

    def __post_init__(self):
        for name in ("raw_accuracy", "adapted_accuracy"):
            a = getattr(self, name)
            if not 0.0 <= a <= 1.0:
                raise ShapeMismatch(f"{name} = {a!r} outside [0, 1]")
        if self.delta_accuracy != self.adapted_accuracy - self.raw_accuracy:
            raise ShapeMismatch("delta_accuracy must equal adapted - raw exactly")


def _clipped(omega) -> np.ndarray:
    if isinstance(omega, Weights):
        return omega.omega_clipped
    return np.maximum(np.asarray(omega, dtype=float), 0.0)


def bayes_adjust(prob_row, omega) -> np.ndarray:
    """Reweight one posterior row: row_i' = w_i row_i / sum_j w_j row_j."""
    row = np.asarray(prob_row, dtype=float)
    w = _clipped(omega)
    if row.shape != w.shape:
        raise DimensionMismatch(f"row has shape {row.shape}, omega has {w.shape}")
    num = row * w
    den = num.sum()
    if den < _MIN_MASS:
        raise ZeroMass("all weight falls on zero-probability classes")
    return num / den


def adjust_matrix(probs: ProbMatrix, omega) -> ProbMatrix:
    """Row-wise :func:`bayes_adjust` over a whole table."""
    P = probs.values if isinstance(probs, ProbMatrix) else np.asarray(probs, dtype=float)
    w = _clipped(omega)
    if P.shape[1] != w.size:
        raise DimensionMismatch(f"table has k={P.shape[1]}, omega has {w.size}")
    num = P * w[None, :]
    den = num.sum(axis=1)
    if np.any(den < _MIN_MASS):
        raise ZeroMass("all weight falls on zero-probability classes for some row")
    return ProbMatrix(num / den[:, None], tol=1e-9)


def adapt_and_predict(probs: ProbMatrix, omega) -> np.ndarray:
    """Adjusted-argmax 1-based predictions (ties go to the lowest index)."""
    adjusted = adjust_matrix(probs, omega)
    return np.argmax(adjusted.values, axis=1) + 1


def weight_mse(estimate, truth) -> float:
    """(1/k) sum_i (estimate_i - truth_i)^2 on the UNCLIPPED estimates."""
    west = estimate.omega if isinstance(estimate, Weights) else np.asarray(estimate, dtype=float)
    wtrue = truth.omega if isinstance(truth, Weights) else np.asarray(truth, dtype=float)
    if west.shape != wtrue.shape:
        raise DimensionMismatch(f"estimate has {west.shape}, truth has {wtrue.shape}")
    return float(np.mean((west - wtrue) ** 2))


def delta_accuracy(raw_preds, adapted_preds, true_labels) -> float:
    """acc(adapted) - acc(raw); negative when adaptation hurts."""
    raw = np.asarray(raw_preds)
    adapted = np.asarray(adapted_preds)
    truth = np.asarray(true_labels)
    if not raw.shape == adapted.shape == truth.shape:
        raise DimensionMismatch("prediction and label vectors must share one length")
    return float(np.mean(adapted == truth) - np.mean(raw == truth))
