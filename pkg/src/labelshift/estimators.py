"""Importance-weight estimators.

Confusion-matrix methods (BBSE hard/soft, RLLS), the class-prior EM (MLLS),
the generic one-shot moment-matching solver, and the ELSA estimating-equation
solver with its damped posterior-difference score map.

All estimators take validated posterior tables and 1-based labels, and return
:class:`~labelshift.core.Weights`.  The reduced-weight convention fixes the
LAST class through sum_i omega_i p_hat_i = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelDist, ProbMatrix, SourceSet, TargetSet, Weights, _check_labels
from .errors import (
    ConfigError,
    DegenerateDenominator,
    DimensionMismatch,
    EMMonotonicityError,
    EmptyClass,
    ShapeMismatch,
    SingularIterationMatrix,
    SingularMatrix,
    SingularSystem,
    ZeroReferenceProp,
    ZeroSourceProp,
)

RCOND_MIN = 1e-12  # reciprocal-condition threshold below which a solve is rejected


# ---------------------------------------------------------------------------
# linear-algebra plumbing

def _rcond(M: np.ndarray) -> float:
    with np.errstate(all="ignore"):
        c = np.linalg.cond(M)
    if not np.isfinite(c) or c == 0:
        return 0.0
    return 1.0 / float(c)


def _solve(M: np.ndarray, b: np.ndarray, error: type, ridge: float = 0.0) -> np.ndarray:
    """Dense solve, rejecting matrices with reciprocal condition < 1e-12.

    A positive ``ridge`` buys one retry on M + ridge*I before failing.
    """
    if _rcond(M) >= RCOND_MIN:
        return np.linalg.solve(M, b)
    if ridge > 0.0:
        Mr = M + ridge * np.eye(M.shape[0])
        if _rcond(Mr) >= RCOND_MIN:
            return np.linalg.solve(Mr, b)
    raise error(f"matrix numerically singular (rcond < {RCOND_MIN})")


def _auto_ridge(M: np.ndarray) -> float:
    k = M.shape[0]
    return 1e-10 * max(abs(float(np.trace(M))) / k, 1e-8)


# ---------------------------------------------------------------------------
# confusion-matrix estimators

@dataclass(frozen=True)
class ConfusionMatrix:
    """k x k joint table: entry (i, j) = (1/n) * predicted mass on class i
    over source samples with true label j.  Columns sum to the empirical
    source proportions; the whole table sums to 1."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ShapeMismatch(f"confusion matrix must be square k x k, got {v.shape}")
        if np.any(v < 0):
            raise ShapeMismatch("confusion matrix entries must be nonnegative")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ShapeMismatch(f"confusion matrix sums to {v.sum()!r}, not 1")
        object.__setattr__(self, "values", v)

    @property
    def k(self) -> int:
        return self.values.shape[0]

    @property
    def source_props(self) -> LabelDist:
        return LabelDist(self.values.sum(axis=0), tol=1e-9)


def confusion_matrix(source: SourceSet, mode: str = "soft") -> ConfusionMatrix:
    """Soft: column j holds the mean posterior rows of class-j samples,
    scaled by p_hat_j.  Hard: argmax counts (ties to the lowest index)."""
    if mode not in ("hard", "soft"):
        raise ConfigError(f"mode must be 'hard' or 'soft', got {mode!r}")
    P = source.probs.values
    y0 = source.labels0
    n, k = P.shape
    counts = np.bincount(y0, minlength=k)
    if np.any(counts == 0):
        missing = int(np.argmin(counts)) + 1
        raise EmptyClass(f"class {missing} has no source samples")
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y0] = 1.0
    if mode == "hard":
        pred = np.argmax(P, axis=1)
        M = np.zeros((k, k))
        np.add.at(M, (pred, y0), 1.0)
        M /= n
    else:
        M = P.T @ onehot / n
    return ConfusionMatrix(M)


def target_mean(target: TargetSet, mode: str = "soft") -> np.ndarray:
    """Hard: empirical frequency of argmax predictions; soft: column means."""
    if mode not in ("hard", "soft"):
        raise ConfigError(f"mode must be 'hard' or 'soft', got {mode!r}")
    P = target.probs.values
    if mode == "hard":
        pred = np.argmax(P, axis=1)
        return np.bincount(pred, minlength=P.shape[1]) / P.shape[0]
    return P.mean(axis=0)


def solve_bbse(C: ConfusionMatrix, mu_t, ridge: float = 0.0) -> Weights:
    """Invert the confusion matrix: omega_hat = C^{-1} mu_t.

    The constraint sum_i p_hat_i omega_i = 1 holds up to solve error because
    C's columns sum to p_hat and mu_t sums to 1.  Negative entries are
    flagged, never clipped, in the returned estimate.
    """
    mu = np.asarray(mu_t, dtype=float)
    if mu.shape != (C.k,):
        raise DimensionMismatch(f"mu_t has shape {mu.shape}, expected ({C.k},)")
    omega = _solve(C.values, mu, SingularMatrix, ridge=ridge)
    return Weights(omega, C.source_props)


def solve_rlls(C: ConfusionMatrix, mu_t, lam: float) -> Weights:
    """Regularized confusion-matrix estimate, shrinking toward all-ones.

    omega = 1 + theta where theta minimizes ||C theta - (mu_t - C 1)||^2
    + lam ||theta||^2.  lam = 0 reduces to the plain inverse on nonsingular C.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be nonnegative, got {lam!r}")
    mu = np.asarray(mu_t, dtype=float)
    if mu.shape != (C.k,):
        raise DimensionMismatch(f"mu_t has shape {mu.shape}, expected ({C.k},)")
    Cv = C.values
    resid = mu - Cv @ np.ones(C.k)
    if lam == 0.0:
        theta = _solve(Cv, resid, SingularMatrix)
    else:
        theta = np.linalg.solve(Cv.T @ Cv + lam * np.eye(C.k), Cv.T @ resid)
    return Weights(1.0 + theta, C.source_props)


# ---------------------------------------------------------------------------
# likelihood estimator (EM over target class priors)

@dataclass(frozen=True)
class MllsState:
    iterations: int
    converged: bool
    loglik: tuple  # average log-likelihood per iteration, non-decreasing


def mlls_em(target_probs: ProbMatrix, source_props: LabelDist,
            tol: float = 1e-8, max_iter: int = 1000, return_state: bool = False):
    """EM for the target class priors q, returning omega_i = q_i / p_hat_i.

    Iterates q_i <- mean_j of the posterior responsibility of class i under
    the current reweighting, starting from q = p_hat.  The average target
    log-likelihood is checked to be non-decreasing every iteration (EM
    guarantee); a decrease beyond 1e-12 raises :class:`EMMonotonicityError`.
    """
    F = target_probs.values
    p = source_props.probs
    if F.shape[1] != p.size:
        raise DimensionMismatch("target table and source_props disagree on k")
    if np.any(p <= 0):
        raise ZeroSourceProp("mlls needs strictly positive source proportions")
    q = p.copy()
    prev_ll = -np.inf
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        w = q / p
        den = F @ w
        ll = float(np.mean(np.log(np.maximum(den, 1e-300))))
        if ll < prev_ll - 1e-12:
            raise EMMonotonicityError(f"log-likelihood decreased: {prev_ll!r} -> {ll!r}")
        trace.append(ll)
        prev_ll = ll
        resp = (F * w) / np.maximum(den, 1e-300)[:, None]
        q_new = resp.mean(axis=0)
        delta = float(np.max(np.abs(q_new - q)))
        q = q_new
        if delta < tol:
            converged = True
            break
    weights = Weights(q / p, source_props)
    if return_state:
        return weights, MllsState(iterations=it, converged=converged, loglik=tuple(trace))
    return weights


# ---------------------------------------------------------------------------
# moment matching

def _reduction_system(labels0: np.ndarray, props: np.ndarray):
    """The (A, v) encoding of omega(y_j) as A_j. omega^(-k) + v_j.

    Row j of A is the 0/1 indicator of y_j among the first k-1 classes, or
    -p_hat_{1..k-1}/p_hat_k when y_j = k; v_j = 1/p_hat_k when y_j = k.
    """
    n, k = labels0.size, props.size
    if props[-1] <= 0:
        raise ZeroReferenceProp("last-class source proportion is zero")
    A = np.zeros((n, k - 1))
    v = np.zeros(n)
    is_last = labels0 == k - 1
    rest = np.flatnonzero(~is_last)
    A[rest, labels0[rest]] = 1.0
    A[is_last] = -(props[:-1] / props[-1])
    v[is_last] = 1.0 / props[-1]
    return A, v


def _require_all_classes(labels0: np.ndarray, k: int) -> None:
    counts = np.bincount(labels0, minlength=k)
    if np.any(counts == 0):
        raise EmptyClass(f"class {int(np.argmin(counts)) + 1} has no source samples")


def moment_match_solve(h_source, h_target, labels, source_props: LabelDist) -> Weights:
    """Solve the empirical moment-matching equation for a fixed map h.

    Matches (1/n) sum_j omega(y_j) h(x_j) over the source with the plain
    target mean (1/m) sum h(x_j), under the closing constraint on omega_k.
    One exact (k-1) x (k-1) linear solve; h must not depend on omega.
    """
    if not isinstance(source_props, LabelDist):
        source_props = LabelDist(source_props)
    k = source_props.k
    hs = np.atleast_2d(np.asarray(h_source, dtype=float))
    ht = np.atleast_2d(np.asarray(h_target, dtype=float))
    if hs.shape[1] != k - 1 or ht.shape[1] != k - 1:
        raise DimensionMismatch(f"h maps must have k-1 = {k - 1} columns")
    n = hs.shape[0]
    labels0 = _check_labels(labels, n, k)
    _require_all_classes(labels0, k)
    A, v = _reduction_system(labels0, source_props.probs)
    M = hs.T @ A / n
    rhs = ht.mean(axis=0) - hs.T @ v / n
    red = _solve(M, rhs, SingularSystem)
    return Weights.from_reduced(red, source_props)


def complete_weights(omega_minus_k, source_props: LabelDist) -> Weights:
    """Close omega_k = (1 - sum_{i<k} p_hat_i omega_i) / p_hat_k; the clipped
    flag is set when any entry is negative (values stay unclipped)."""
    if not isinstance(source_props, LabelDist):
        source_props = LabelDist(source_props)
    return Weights.from_reduced(omega_minus_k, source_props)


# ---------------------------------------------------------------------------
# ELSA

def h_matrix(P: np.ndarray, omega: np.ndarray, pi: float) -> np.ndarray:
    """Damped posterior-difference score rows for an (n, k) posterior table.

    Row-wise: (p_i - p_k)_{i<k} divided by E{w^2|x}/pi + E{w|x}/(1-pi) where
    E{w^q|x} = sum_i omega_i^q p_i.  Shared by the solver and the
    plug-in covariance code so the two always agree.
    """
    e1 = P @ omega
    e2 = P @ (omega * omega)
    den = e2 / pi + e1 / (1.0 - pi)
    if np.any(den <= 1e-300):
        raise DegenerateDenominator("score denominator collapsed (weights ~0 on a row's support)")
    return (P[:, :-1] - P[:, -1:]) / den[:, None]


def h_elsa(prob_row, omega, pi: float) -> np.ndarray:
    """Single-row version of :func:`h_matrix`."""
    if not 0.0 < pi < 1.0:
        raise ConfigError(f"pi must lie in (0, 1), got {pi!r}")
    row = np.asarray(prob_row, dtype=float)
    w = omega.omega if isinstance(omega, Weights) else np.asarray(omega, dtype=float)
    if row.shape != w.shape:
        raise DimensionMismatch(f"row has {row.shape}, omega has {w.shape}")
    return h_matrix(row[None, :], w, pi)[0]


@dataclass(frozen=True)
class ElsaConfig:
    solver: str = "fixed_point"       # or "least_squares"
    tol: float = 1e-8                 # infinity-norm of the iterate update
    max_iter: int = 500
    ridge: float = 0.0                # 0 -> automatic 1e-10-scale fallback on singularity
    init: np.ndarray | None = None    # full omega init; default all-ones
    pi: float | None = None           # default n / (n + m)
    fallback: bool = True             # least-squares rescue when fixed point fails

    def __post_init__(self):
        if self.solver not in ("fixed_point", "least_squares"):
            raise ConfigError(f"unknown solver {self.solver!r}")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


@dataclass(frozen=True)
class ElsaState:
    omega_minus_k: np.ndarray
    pi: float
    iteration: int
    residual: float           # infinity-norm of the last iterate update
    equation_residual: float  # infinity-norm of the moment equation at the solution
    converged: bool
    solver: str


def _fixed_point_step(hs: np.ndarray, ht: np.ndarray, A: np.ndarray, v: np.ndarray,
                      n: int, m: int, ridge: float) -> np.ndarray:
    """One update: solve {H A} omega = (n/m) H* 1 - H v for the reduced vector.

    Linear in h, so rescaling every h row by a common constant leaves the
    update unchanged.
    """
    M = hs.T @ A
    b = (n / m) * ht.sum(axis=0) - hs.T @ v
    return _solve(M, b, SingularIterationMatrix, ridge=ridge if ridge > 0 else _auto_ridge(M))


def _equation_residual(red: np.ndarray, Ps, Pt, A, v, props, pi) -> float:
    omega = _complete(red, props)
    hs = h_matrix(Ps, omega, pi)
    ht = h_matrix(Pt, omega, pi)
    G = hs.T @ (A @ red + v) / Ps.shape[0] - ht.mean(axis=0)
    return float(np.max(np.abs(G)))


def _complete(red: np.ndarray, props: np.ndarray) -> np.ndarray:
    return np.append(red, (1.0 - red @ props[:-1]) / props[-1])


def _iterate_box(props: np.ndarray):
    """The region that can contain the root: omega_i = p_t(i)/p_hat_i <= 1/p_hat_i
    and omega_i >= 0 by definition (estimates get a little slack in the
    least-squares search)."""
    return np.zeros(props.size - 1), 1.0 / props[:-1]


def _solve_fixed_point(Ps, Pt, A, v, props, pi, red0, config: ElsaConfig):
    """Fixed-point iteration with two stabilizers for extreme shifts: each
    update is projected onto the root box, and steps are shortened until the
    score map stays evaluable (denominators can collapse when several classes
    carry ~zero target mass).  The iterate with the smallest equation residual
    is kept as the fallback answer."""
    n, m = Ps.shape[0], Pt.shape[0]
    lo, hi = _iterate_box(props)
    red = red0.copy()
    residual = np.inf
    best_eq, best_red = np.inf, red.copy()
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        omega = _complete(red, props)
        try:
            hs = h_matrix(Ps, omega, pi)
            ht = h_matrix(Pt, omega, pi)
        except DegenerateDenominator:
            break
        G = hs.T @ (A @ red + v) / n - ht.mean(axis=0)
        eq = float(np.max(np.abs(G)))
        if eq < best_eq:
            best_eq, best_red = eq, red.copy()
        cand = _fixed_point_step(hs, ht, A, v, n, m, config.ridge)
        if not np.all(np.isfinite(cand)):
            break
        cand = np.clip(cand, lo, hi)
        step = cand - red
        t = 1.0
        while t > 1e-9 and not _evaluable(Ps, Pt, red + t * step, props, pi):
            t *= 0.5
        if t <= 1e-9:
            break
        red_new = red + t * step
        residual = float(np.max(np.abs(red_new - red)))
        red = red_new
        if residual < config.tol:
            converged = True
            break
    if converged:
        best_red = red
        best_eq = _equation_residual(red, Ps, Pt, A, v, props, pi)
    return best_red, ElsaState(omega_minus_k=best_red, pi=pi, iteration=it,
                               residual=residual, equation_residual=best_eq,
                               converged=converged, solver="fixed_point")


def _evaluable(Ps, Pt, red, props, pi) -> bool:
    omega = _complete(red, props)
    e2s = Ps @ (omega * omega)
    e1s = Ps @ omega
    e2t = Pt @ (omega * omega)
    e1t = Pt @ omega
    return (np.min(e2s / pi + e1s / (1.0 - pi)) > 1e-300
            and np.min(e2t / pi + e1t / (1.0 - pi)) > 1e-300)


def _solve_least_squares(Ps, Pt, A, v, props, pi, red0, config: ElsaConfig):
    """Minimize the squared norm of the moment equation with a bounded
    trust-region descent.  Bounds matter: rescaling omega up makes every score
    row shrink like 1/omega^2, so the unbounded problem has a spurious
    minimum at infinity."""
    from scipy.optimize import least_squares

    n = Ps.shape[0]
    kk = red0.size
    lo, hi = _iterate_box(props)
    lo = lo - 0.5
    hi = hi + 0.5

    def residuals(red):
        omega = _complete(red, props)
        try:
            hs = h_matrix(Ps, omega, pi)
            ht = h_matrix(Pt, omega, pi)
        except DegenerateDenominator:
            return np.full(kk, 1e6)
        return hs.T @ (A @ red + v) / n - ht.mean(axis=0)

    x0 = np.clip(red0, lo + 1e-9, hi - 1e-9)
    res = least_squares(residuals, x0, method="trf", bounds=(lo, hi),
                        xtol=1e-14, ftol=1e-14, gtol=1e-14, max_nfev=400 * (kk + 1))
    red = res.x
    eq = _equation_residual(red, Ps, Pt, A, v, props, pi)
    converged = bool(res.success) and eq < 1e-6 * (kk + 1)
    return red, ElsaState(omega_minus_k=red, pi=pi, iteration=int(res.nfev),
                          residual=float(np.max(np.abs(res.fun))), equation_residual=eq,
                          converged=converged, solver="least_squares")


def elsa_solve(source: SourceSet, target: TargetSet,
               config: ElsaConfig = ElsaConfig()) -> tuple[Weights, ElsaState]:
    """Solve the damped-score moment equation for the importance weights.

    ``fixed_point`` re-solves the per-iteration linear system until the
    reduced iterate stabilizes; ``least_squares`` minimizes the squared norm
    of the equation with a Levenberg-Marquardt descent from the same
    all-ones start.  When the fixed point fails (singular iteration matrix,
    collapsed denominator, or no convergence) and ``config.fallback`` is on,
    the least-squares path takes over automatically.
    """
    Ps = source.probs.values
    Pt = target.probs.values
    if Ps.shape[1] != Pt.shape[1]:
        raise DimensionMismatch("source and target disagree on k")
    n, k = Ps.shape
    m = Pt.shape[0]
    _require_all_classes(source.labels0, k)
    counts = np.bincount(source.labels0, minlength=k)
    props = counts / n
    pi = config.pi if config.pi is not None else n / (n + m)
    if not 0.0 < pi < 1.0:
        raise ConfigError(f"pi must lie in (0, 1), got {pi!r}")
    A, v = _reduction_system(source.labels0, props)
    if config.init is not None:
        init = np.asarray(config.init, dtype=float)
        red0 = init[:-1] if init.size == k else init
        if red0.size != k - 1:
            raise DimensionMismatch(f"init needs k={k} (or k-1) entries, got {init.size}")
    else:
        red0 = np.ones(k - 1)

    if config.solver == "least_squares":
        red, state = _solve_least_squares(Ps, Pt, A, v, props, pi, red0, config)
    else:
        try:
            red, state = _solve_fixed_point(Ps, Pt, A, v, props, pi, red0, config)
        except SingularIterationMatrix:
            if not config.fallback:
                raise
            red, state = _solve_least_squares(Ps, Pt, A, v, props, pi, red0, config)
        else:
            if not state.converged and config.fallback:
                # polish from the best fixed-point iterate; keep the better root
                red_ls, state_ls = _solve_least_squares(Ps, Pt, A, v, props, pi, red, config)
                if state_ls.equation_residual <= state.equation_residual:
                    red, state = red_ls, state_ls

    props_dist = LabelDist(props)
    return Weights.from_reduced(red, props_dist), state
