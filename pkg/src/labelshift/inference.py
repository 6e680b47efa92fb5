"""Plug-in uncertainty for the ELSA weights: the pooled estimating function,
its sandwich covariance pi * U V U^T for the sqrt(n)-scaled reduced weights,
and normal-theory confidence intervals.

The estimating function and the solver share one score-map code path
(:func:`labelshift.estimators.h_matrix`), so the pooled mean of the
estimating function vanishes at the solver's solution by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SourceSet, TargetSet, Weights
from .errors import ConfigError, DimensionMismatch, EmptyClass, MissingLabel, SingularJacobian
from .estimators import _complete, h_matrix

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class SandwichEstimate:
    """Weights plus the plug-in limit covariance of sqrt(n) * (reduced weights).

    ``covariance`` is (k-1) x (k-1), symmetric PSD up to rounding; divide by n
    for the finite-sample variance of the reduced estimate.  ``intervals`` are
    per-class [lo, hi] rows at ``level``; the last class is propagated through
    the linear closing identity.
    """

    weights: Weights
    covariance: np.ndarray
    pi: float
    n: int
    level: float
    intervals: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if np.max(np.abs(cov - cov.T)) > 1e-9:
            raise ConfigError("covariance must be symmetric")
        object.__setattr__(self, "covariance", cov)

    def to_json_dict(self) -> dict:
        return {
            "omega": self.weights.omega.tolist(),
            "covariance": self.covariance.tolist(),
            "pi": self.pi,
            "n": self.n,
            "level": self.level,
            "intervals": self.intervals.tolist(),
        }


def estimating_function_g(prob_row, y, r: int, omega: Weights, pi: float, Eh_k) -> np.ndarray:
    """Per-sample estimating function value (length k-1).

    Source samples (r=1) need their 1-based label y; target samples (r=0)
    contribute -h(x)/(1-pi) regardless of Eh_k.
    """
    if r not in (0, 1):
        raise ConfigError(f"r must be 0 or 1, got {r!r}")
    row = np.asarray(prob_row, dtype=float)
    w = omega.omega
    h = h_matrix(row[None, :], w, pi)[0]
    Eh_k = np.asarray(Eh_k, dtype=float)
    if Eh_k.shape != (w.size - 1,):
        raise DimensionMismatch(f"Eh_k must have length k-1 = {w.size - 1}")
    if r == 0:
        return -h / (1.0 - pi)
    if y is None:
        raise MissingLabel("source samples (r=1) need a label")
    wy = w[int(y) - 1]
    return (1.0 - wy) / pi * Eh_k + wy / pi * h


def _pooled_g(Ps, labels0, Pt, omega_full, pi):
    """Stacked g values over source then target rows, plus the Eh_k used."""
    hs = h_matrix(Ps, omega_full, pi)
    ht = h_matrix(Pt, omega_full, pi)
    last = labels0 == Ps.shape[1] - 1
    if not np.any(last):
        raise EmptyClass("no source samples in the reference class; cannot estimate E(h | y=k)")
    Eh_k = hs[last].mean(axis=0)
    wy = omega_full[labels0]
    g_src = ((1.0 - wy) / pi)[:, None] * Eh_k[None, :] + (wy / pi)[:, None] * hs
    g_tgt = -ht / (1.0 - pi)
    return np.vstack([g_src, g_tgt])


def sandwich_covariance(source: SourceSet, target: TargetSet, omega_hat: Weights,
                        pi: float | None = None, fd_step: float = 1e-4,
                        level: float = 0.95) -> SandwichEstimate:
    """Plug-in pi * U V U^T at the fitted weights.

    V is the pooled second moment of the estimating function; U^{-1} is the
    pooled Jacobian in the reduced weights, by central finite differences with
    per-coordinate step fd_step * max(1, |omega_i|).  Each perturbation
    re-closes the last weight through the constraint and re-evaluates both the
    score rows and E(h | y=k).
    """
    Ps = source.probs.values
    Pt = target.probs.values
    n, k = Ps.shape
    m = Pt.shape[0]
    if pi is None:
        pi = n / (n + m)
    if not 0.0 < pi < 1.0:
        raise ConfigError(f"pi must lie in (0, 1), got {pi!r}")
    props = omega_hat.source_props.probs
    red_hat = omega_hat.omega_minus_k.copy()

    def pooled_mean(red):
        return _pooled_g(Ps, source.labels0, Pt, _complete(red, props), pi).mean(axis=0)

    G = _pooled_g(Ps, source.labels0, Pt, omega_hat.omega, pi)
    V = G.T @ G / (n + m)

    J = np.empty((k - 1, k - 1))
    for j in range(k - 1):
        step = fd_step * max(1.0, abs(red_hat[j]))
        up = red_hat.copy()
        up[j] += step
        dn = red_hat.copy()
        dn[j] -= step
        J[:, j] = (pooled_mean(up) - pooled_mean(dn)) / (2.0 * step)

    with np.errstate(all="ignore"):
        c = np.linalg.cond(J)
    if not np.isfinite(c) or 1.0 / c < RCOND_MIN:
        raise SingularJacobian("estimating-function Jacobian is numerically singular")
    U = np.linalg.inv(J)
    cov = pi * U @ V @ U.T
    cov = 0.5 * (cov + cov.T)
    est = SandwichEstimate(weights=omega_hat, covariance=cov, pi=pi, n=n,
                           level=level, intervals=np.zeros((k, 2)))
    intervals = confidence_intervals(est, level)
    return SandwichEstimate(weights=omega_hat, covariance=cov, pi=pi, n=n,
                            level=level, intervals=intervals)


def confidence_intervals(est: SandwichEstimate, level: float) -> np.ndarray:
    """Per-class [lo, hi] at the given level.

    Classes i < k use the covariance diagonal; the last class variance is
    a^T cov a with a_i = -p_hat_i / p_hat_k from the closing identity.
    """
    if not 0.0 <= level < 1.0:
        raise ConfigError(f"level must lie in [0, 1), got {level!r}")
    z = normal_quantile(0.5 * (1.0 + level))
    cov = est.covariance
    omega = est.weights.omega
    p = est.weights.source_props.probs
    k = omega.size
    half = np.empty(k)
    half[:-1] = z * np.sqrt(np.maximum(np.diag(cov), 0.0) / est.n)
    a = -p[:-1] / p[-1]
    var_last = float(a @ cov @ a)
    half[-1] = z * math.sqrt(max(var_last, 0.0) / est.n)
    return np.column_stack([omega - half, omega + half])


# rational approximation of the standard normal quantile (inverse CDF),
# refined by one Halley step through erfc; absolute error ~ 1e-15
_QA = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
       1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_QB = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
       6.680131188771972e+01, -1.328068155288572e+01)
_QC = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
       -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_QD = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
       3.754408661907416e+00)


_PLOW = 0.02425


def _tail_quantile(p: float) -> float:
    """Quantile for p in (0, 0.02425): rational seed plus one Halley step.

    The CDF residual is evaluated in the tail (erfc of a positive argument),
    where there is no cancellation, and the 1/phi amplification is done in
    log space to survive extreme tails.
    """
    q = math.sqrt(-2.0 * math.log(p))
    x = ((((( _QC[0] * q + _QC[1]) * q + _QC[2]) * q + _QC[3]) * q + _QC[4]) * q + _QC[5]) / \
        (((( _QD[0] * q + _QD[1]) * q + _QD[2]) * q + _QD[3]) * q + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    if e == 0.0:
        return x
    log_u = math.log(abs(e)) + 0.5 * x * x + 0.5 * math.log(2.0 * math.pi)
    u = math.copysign(math.exp(log_u), e)
    return x - u / (1.0 + 0.5 * x * u)


def normal_quantile(p: float) -> float:
    """Standard normal inverse CDF via a rational approximation plus one
    Halley refinement (no table, no special-function dependency)."""
    if not 0.0 < p < 1.0:
        raise ConfigError(f"quantile argument must lie in (0, 1), got {p!r}")
    if p < _PLOW:
        return _tail_quantile(p)
    if p > 1.0 - _PLOW:
        return -_tail_quantile(1.0 - p)
    q = p - 0.5
    r = q * q
    x = ((((( _QA[0] * r + _QA[1]) * r + _QA[2]) * r + _QA[3]) * r + _QA[4]) * r + _QA[5]) * q / \
        ((((( _QB[0] * r + _QB[1]) * r + _QB[2]) * r + _QB[3]) * r + _QB[4]) * r + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)
