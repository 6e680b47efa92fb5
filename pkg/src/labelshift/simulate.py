"""Synthetic ground truth: axis-aligned Gaussian mixtures with analytically
exact class posteriors, plus the two target-shift mechanisms (symmetric
Dirichlet draws and the tweak-one distribution).

Everything is a pure function of (spec, seed).  Randomness comes from the
counter-based Philox generator, and per-replication streams are derived from
(seed, replication index) so parallel and serial benchmark runs agree
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LabelDist, ProbMatrix, TargetSet
from .errors import (
    ConfigError,
    IndexOutOfRange,
    InvalidAlpha,
    NumericalUnderflow,
    ShapeMismatch,
    UnsupportedClass,
)

_LOG_2PI = float(np.log(2.0 * np.pi))
_POSTERIOR_TOL = 1e-12  # internally produced rows are exact to rounding


def rng_from_seed(seed) -> np.random.Generator:
    """Philox generator for an integer seed or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def replication_seeds(seed: int, replication: int, count: int = 4) -> list[int]:
    """Derive ``count`` independent integer seeds for one replication.

    Deterministic in (seed, replication); replications can therefore run in
    any order, on any number of workers, with identical results.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication),))
    return [int(s) for s in ss.generate_state(count)]


@dataclass(frozen=True)
class MixtureSpec:
    """Per-class axis-aligned Gaussians sharing one feature law across domains."""

    means: np.ndarray          # (k, dim)
    variances: np.ndarray      # (k, dim), strictly positive
    source_prior: LabelDist

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        variances = np.asarray(self.variances, dtype=float)
        if means.ndim != 2 or means.shape != variances.shape:
            raise ShapeMismatch(
                f"means {means.shape} and variances {variances.shape} must both be (k, dim)")
        if means.shape[0] != self.source_prior.k:
            raise ShapeMismatch("class count of means and source_prior disagree")
        if not np.all(np.isfinite(means)):
            raise ShapeMismatch("means must be finite")
        if not np.all(variances > 0):
            raise ShapeMismatch("variances must be strictly positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def ring(cls, k: int, dim: int = 2, radius: float = 3.0, var: float = 1.0,
             source_prior=None) -> "MixtureSpec":
        """Class means spread on a circle (line for dim=1); unit-ish overlap knob via radius/var."""
        if source_prior is None:
            source_prior = LabelDist(np.full(k, 1.0 / k))
        elif not isinstance(source_prior, LabelDist):
            source_prior = LabelDist(source_prior)
        means = np.zeros((k, dim))
        if dim == 1:
            means[:, 0] = np.linspace(-radius, radius, k)
        else:
            angles = 2.0 * np.pi * np.arange(k) / k
            means[:, 0] = radius * np.cos(angles)
            means[:, 1] = radius * np.sin(angles)
        return cls(means=means, variances=np.full((k, dim), float(var)), source_prior=source_prior)


@dataclass(frozen=True)
class ShiftSpec:
    """Target label-distribution mechanism: dirichlet(alpha) or tweak_one(rho)."""

    mechanism: str = "dirichlet"
    alpha: float = 1.0
    rho: float = 0.9
    tweak_index: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("dirichlet", "tweak_one"):
            raise ConfigError(f"unknown shift mechanism {self.mechanism!r}")
        if self.mechanism == "dirichlet" and self.alpha <= 0:
            raise InvalidAlpha(f"alpha must be positive, got {self.alpha!r}")
        if self.mechanism == "tweak_one" and not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho!r}")

    def draw(self, k: int, replication: int = 0) -> LabelDist:
        if self.mechanism == "tweak_one":
            return tweak_one_dist(k, self.rho, self.tweak_index)
        return sample_dirichlet_dist(k, self.alpha, replication_seeds(self.seed, replication, 1)[0])


def sample_dirichlet_dist(k: int, alpha: float, seed) -> LabelDist:
    """One draw from the symmetric Dirichlet(alpha, ..., alpha) over k classes.

    Implemented as k independent Gamma(alpha, 1) draws, normalized.
    """
    if alpha <= 0:
        raise InvalidAlpha(f"alpha must be positive, got {alpha!r}")
    if k < 2:
        raise ShapeMismatch("need k >= 2 classes")
    rng = rng_from_seed(seed)
    g = rng.gamma(alpha, 1.0, size=k)
    # For very small alpha every draw can underflow to 0; redraw (still a
    # deterministic function of the seed).
    for _ in range(100):
        if g.sum() > 0:
            break
        g = rng.gamma(alpha, 1.0, size=k)
    else:
        raise NumericalUnderflow("all gamma draws underflowed")
    return LabelDist(g / g.sum())


def tweak_one_dist(k: int, rho: float, tweak_index: int) -> LabelDist:
    """Put mass rho on one class and (1-rho)/(k-1) on each of the others."""
    if k < 2:
        raise ShapeMismatch("need k >= 2 classes")
    if not 0.0 <= rho <= 1.0:
        raise ConfigError(f"rho must lie in [0, 1], got {rho!r}")
    if not 1 <= tweak_index <= k:
        raise IndexOutOfRange(f"tweak_index {tweak_index} outside 1..{k}")
    p = np.full(k, (1.0 - rho) / (k - 1))
    p[tweak_index - 1] = rho
    return LabelDist(p)


def _log_densities(spec: MixtureSpec, X: np.ndarray, mean_shift: float) -> np.ndarray:
    """(n, k) table of per-class Gaussian log-densities at the rows of X."""
    means = spec.means + mean_shift
    # (n, k, dim) residuals collapse over dim
    diff = X[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / spec.variances[None, :, :], axis=2)
    logdet = np.sum(np.log(spec.variances), axis=1)
    return -0.5 * (quad + logdet[None, :] + spec.dim * _LOG_2PI)


def posterior_matrix(spec: MixtureSpec, prior: LabelDist, X,
                     mean_shift: float = 0.0) -> ProbMatrix:
    """Exact Bayes posteriors p(y=i | x) for each row of X, in log-space.

    ``mean_shift`` evaluates the posterior under class means shifted by a
    constant in every coordinate -- the misspecification knob emulating an
    imperfect classifier.  0 gives the exact posterior.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != spec.dim:
        raise ShapeMismatch(f"features have dim {X.shape[1]}, spec has {spec.dim}")
    logp = _log_densities(spec, X, mean_shift)
    with np.errstate(divide="ignore"):
        logp = logp + np.log(prior.probs)[None, :]
    top = logp.max(axis=1)
    if np.any(~np.isfinite(top)):
        raise NumericalUnderflow("all class log-densities are -inf for some row")
    w = np.exp(logp - top[:, None])
    return ProbMatrix(w / w.sum(axis=1)[:, None], tol=_POSTERIOR_TOL)


def exact_posterior(spec: MixtureSpec, prior: LabelDist, x) -> np.ndarray:
    """Posterior row for a single feature vector (see :func:`posterior_matrix`)."""
    return posterior_matrix(spec, prior, np.atleast_2d(np.asarray(x, dtype=float))).values[0]


def generate_mixture(spec: MixtureSpec, label_dist: LabelDist, n: int, seed,
                     mean_shift: float = 0.0):
    """Draw n labeled samples and their posteriors under ``label_dist``.

    Returns (features (n, dim), labels (1-based), posteriors ProbMatrix).
    Posteriors are evaluated under the same ``label_dist`` and, when
    ``mean_shift`` is nonzero, under perturbed means (imperfect-classifier
    emulation).
    """
    if n < 1:
        raise ShapeMismatch("need n >= 1 samples")
    if label_dist.k != spec.k:
        raise ShapeMismatch("label_dist and spec class counts disagree")
    rng = rng_from_seed(seed)
    labels0 = rng.choice(spec.k, size=n, p=label_dist.probs)
    noise = rng.standard_normal((n, spec.dim))
    features = spec.means[labels0] + np.sqrt(spec.variances[labels0]) * noise
    posts = posterior_matrix(spec, label_dist, features, mean_shift=mean_shift)
    return features, labels0 + 1, posts


def resample_indices(pool_labels0: np.ndarray, target_dist: LabelDist, m: int,
                     rng: np.random.Generator) -> np.ndarray:
    """m pool indices: label drawn from target_dist, then a uniform
    with-replacement draw within that label's pool."""
    k = target_dist.k
    by_class = [np.flatnonzero(pool_labels0 == c) for c in range(k)]
    for c in range(k):
        if target_dist.probs[c] > 0 and by_class[c].size == 0:
            raise UnsupportedClass(f"target mass {target_dist.probs[c]!r} on class {c + 1} "
                                   "but the pool has no such sample")
    drawn = rng.choice(k, size=m, p=target_dist.probs)
    out = np.empty(m, dtype=np.int64)
    for c in range(k):
        where = np.flatnonzero(drawn == c)
        if where.size:
            out[where] = by_class[c][rng.integers(0, by_class[c].size, size=where.size)]
    return out


def resample_target(pool_rows, pool_labels, target_dist: LabelDist, m: int, seed) -> TargetSet:
    """Build a target set by label-conditional with-replacement resampling.

    ``pool_rows`` are the pool's prediction rows (probabilities or logits,
    matching what the estimators will consume); ``pool_labels`` are 1-based.
    The resampled labels ride along as hidden evaluation labels.
    """
    if m < 1:
        raise ShapeMismatch("need m >= 1 samples")
    rows = pool_rows.values if hasattr(pool_rows, "values") else np.asarray(pool_rows, dtype=float)
    labels0 = np.asarray(pool_labels, dtype=np.int64) - 1
    if labels0.shape != (rows.shape[0],):
        raise ShapeMismatch("pool labels and rows disagree in length")
    rng = rng_from_seed(seed)
    idx = resample_indices(labels0, target_dist, m, rng)
    picked = rows[idx]
    table = type(pool_rows)(picked) if hasattr(pool_rows, "values") else picked
    return TargetSet(table, hidden_labels=labels0[idx] + 1)
