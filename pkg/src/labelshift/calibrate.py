"""Post-hoc probability calibration of classifier logits.

Four parametric maps fitted by held-out negative log-likelihood:

- ts    temperature scaling            softmax(z / T)
- bcts  bias-corrected temperature     softmax(z / T + b)
- nbvs  no-bias vector scaling         softmax(w * z)
- vs    vector scaling                 softmax(w * z + b)

plus ``none`` (plain softmax).  Fitting is full-batch gradient descent with
backtracking line search on the analytic NLL gradients; parameter counts are
at most 2k+1 so nothing heavier is warranted.  Temperatures are parametrized
internally as 1/T to keep positivity unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LogitMatrix, ProbMatrix, _check_labels
from .errors import ConfigError, DegenerateFit, DimensionMismatch

METHODS = ("none", "ts", "bcts", "nbvs", "vs")

FIT_TOL = 1e-7        # infinity-norm of the NLL gradient
FIT_MAX_ITER = 2000


def softmax(logits) -> np.ndarray:
    """Row-wise stable softmax; accepts a single row or an n x k table."""
    z = np.asarray(logits, dtype=float)
    one_row = z.ndim == 1
    z = np.atleast_2d(z)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    return p[0] if one_row else p


@dataclass(frozen=True)
class CalibrationMap:
    """Fitted calibration parameters; unused blocks stay None per method."""

    method: str
    temperature: float | None = None
    scale: np.ndarray | None = None
    bias: np.ndarray | None = None
    converged: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown calibration method {self.method!r}")
        need_t = self.method in ("ts", "bcts")
        need_scale = self.method in ("nbvs", "vs")
        need_bias = self.method in ("bcts", "vs")
        if need_t:
            if self.temperature is None or self.temperature <= 0:
                raise ConfigError(f"{self.method} needs a positive temperature")
        elif self.temperature is not None:
            raise ConfigError(f"{self.method} takes no temperature")
        if need_scale != (self.scale is not None):
            raise ConfigError(f"{self.method}: scale block mismatch")
        if need_bias != (self.bias is not None):
            raise ConfigError(f"{self.method}: bias block mismatch")
        if self.scale is not None:
            object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))
        if self.bias is not None:
            object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float))

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "temperature": self.temperature,
            "scale": None if self.scale is None else self.scale.tolist(),
            "bias": None if self.bias is None else self.bias.tolist(),
        }


def identity_map(method: str, k: int) -> CalibrationMap:
    """The parameters at which every method reduces to plain softmax."""
    if method == "none":
        return CalibrationMap("none")
    if method == "ts":
        return CalibrationMap("ts", temperature=1.0)
    if method == "bcts":
        return CalibrationMap("bcts", temperature=1.0, bias=np.zeros(k))
    if method == "nbvs":
        return CalibrationMap("nbvs", scale=np.ones(k))
    if method == "vs":
        return CalibrationMap("vs", scale=np.ones(k), bias=np.zeros(k))
    raise ConfigError(f"unknown calibration method {method!r}")


def _transform(map_: CalibrationMap, z: np.ndarray) -> np.ndarray:
    k = z.shape[1]
    m = map_.method
    if m == "none":
        return z
    if m == "ts":
        return z / map_.temperature
    if m == "bcts":
        if map_.bias.size != k:
            raise DimensionMismatch(f"bias has {map_.bias.size} entries for k={k}")
        return z / map_.temperature + map_.bias
    if m == "nbvs":
        if map_.scale.size != k:
            raise DimensionMismatch(f"scale has {map_.scale.size} entries for k={k}")
        return map_.scale * z
    if m == "vs":
        if map_.scale.size != k or map_.bias.size != k:
            raise DimensionMismatch("scale/bias size mismatch")
        return map_.scale * z + map_.bias
    raise ConfigError(f"unknown calibration method {m!r}")


def apply_calibration(map_: CalibrationMap, logits: LogitMatrix) -> ProbMatrix:
    """Transform logits through the map, row-wise, into simplex rows."""
    if not isinstance(logits, LogitMatrix):
        logits = LogitMatrix(logits)
    return ProbMatrix(softmax(_transform(map_, logits.values)), tol=1e-9)


def _pack(method: str, k: int) -> np.ndarray:
    # identity initialization in the internal parametrization (beta = 1/T)
    if method == "ts":
        return np.ones(1)
    if method == "bcts":
        return np.concatenate([[1.0], np.zeros(k)])
    if method == "nbvs":
        return np.ones(k)
    if method == "vs":
        return np.concatenate([np.ones(k), np.zeros(k)])
    raise ConfigError(f"cannot fit method {method!r}")


def _unpack(method: str, theta: np.ndarray, k: int) -> CalibrationMap:
    if method == "ts":
        beta = theta[0]
        if beta <= 0:
            raise DegenerateFit("fitted temperature is not positive")
        return CalibrationMap("ts", temperature=1.0 / beta)
    if method == "bcts":
        beta = theta[0]
        if beta <= 0:
            raise DegenerateFit("fitted temperature is not positive")
        return CalibrationMap("bcts", temperature=1.0 / beta, bias=theta[1:].copy())
    if method == "nbvs":
        return CalibrationMap("nbvs", scale=theta.copy())
    return CalibrationMap("vs", scale=theta[:k].copy(), bias=theta[k:].copy())


def _nll_grad(method: str, theta: np.ndarray, Z: np.ndarray, y0: np.ndarray):
    """Average NLL of the true labels under the transformed logits, and its gradient."""
    n, k = Z.shape
    if method == "ts":
        u = theta[0] * Z
    elif method == "bcts":
        u = theta[0] * Z + theta[1:]
    elif method == "nbvs":
        u = theta * Z
    else:
        u = theta[:k] * Z + theta[k:]
    u = u - u.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(u).sum(axis=1))
    nll = float(np.mean(log_norm - u[np.arange(n), y0]))
    P = np.exp(u - log_norm[:, None])
    G = P
    G[np.arange(n), y0] -= 1.0
    G /= n
    if method == "ts":
        grad = np.array([np.sum(G * Z)])
    elif method == "bcts":
        grad = np.concatenate([[np.sum(G * Z)], G.sum(axis=0)])
    elif method == "nbvs":
        grad = (G * Z).sum(axis=0)
    else:
        grad = np.concatenate([(G * Z).sum(axis=0), G.sum(axis=0)])
    return nll, grad


def fit_calibration(method: str, logits: LogitMatrix, labels,
                    max_iter: int = FIT_MAX_ITER, tol: float = FIT_TOL) -> CalibrationMap:
    """Fit a calibration map by minimizing held-out NLL from identity init.

    Descent is monotone, so the returned NLL never exceeds the identity
    (plain softmax) NLL.  If the gradient norm is still above ``tol`` after
    ``max_iter`` iterations the best-so-far parameters are returned with
    ``converged=False``.
    """
    if method == "none":
        return CalibrationMap("none")
    if method not in METHODS:
        raise ConfigError(f"unknown calibration method {method!r}")
    if not isinstance(logits, LogitMatrix):
        logits = LogitMatrix(logits)
    Z = logits.values
    n, k = Z.shape
    y0 = _check_labels(labels, n, k)
    if np.unique(y0).size < 2:
        raise DegenerateFit("calibration fit needs at least two observed classes")

    theta = _pack(method, k)
    f, g = _nll_grad(method, theta, Z, y0)
    step = 1.0
    converged = False
    for _ in range(max_iter):
        if np.max(np.abs(g)) < tol:
            converged = True
            break
        # backtracking line search on the steepest-descent direction
        gsq = float(g @ g)
        t = step
        while t > 1e-16:
            cand = theta - t * g
            fc, gc = _nll_grad(method, cand, Z, y0)
            if fc <= f - 1e-4 * t * gsq:
                theta, f, g = cand, fc, gc
                break
            t *= 0.5
        else:
            break  # no descent possible at machine precision
        step = min(1.0, 4.0 * t)
    else:
        converged = np.max(np.abs(g)) < tol

    out = _unpack(method, theta, k)
    return CalibrationMap(out.method, temperature=out.temperature,
                          scale=out.scale, bias=out.bias, converged=converged)
