"""
Shared numerical kernels: stable softmax, logistic and ordinal interval
probabilities, a BFGS maximizer with Armijo backtracking, and a central
finite-difference gradient checker used to validate every analytic gradient.
"""
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, logsumexp
from scipy.special import softmax as _softmax

from utils.config import BFGS_DEFAULTS
from utils.errors import NumericDomainError

logger = logging.getLogger(__name__)

__all__ = [
    "ObjectiveHandle",
    "BfgsResult",
    "softmax",
    "log_softmax",
    "logistic",
    "logistic_density",
    "interval_probs",
    "ordinal_cdf",
    "ordinal_probs",
    "logsumexp",
    "as_rows",
    "bfgs_maximize",
    "check_gradient",
]


@dataclass(frozen=True)
class ObjectiveHandle:
    """Scalar objective and its gradient over a flat parameter vector"""
    eval: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]


class BfgsResult(NamedTuple):
    x: np.ndarray
    value: float
    converged: bool
    iterations: int


def _require_finite(v: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(v)):
        raise NumericDomainError(f"{what}: non-finite input")


def softmax(v, axis: int = -1) -> np.ndarray:
    """Softmax along `axis`, computed after subtracting the maximum"""
    v = np.asarray(v, dtype=float)
    _require_finite(v, "softmax")
    return _softmax(v, axis=axis)


def log_softmax(v, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    _require_finite(v, "log_softmax")
    return v - logsumexp(v, axis=axis, keepdims=True)


def logistic(x):
    """1 / (1 + exp(-x)); saturates instead of overflowing"""
    return expit(x)


def logistic_density(x):
    return expit(x) * expit(-x)


def interval_probs(lower, upper):
    """F(upper) - F(lower) for the logistic CDF F, elementwise.

    Bounds may be infinite. When the interval lies in the right tail the
    difference is taken on survival functions so that mass close to one
    keeps its precision.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    right_tail = lower > 0
    with np.errstate(invalid="ignore"):
        left = expit(upper) - expit(lower)
        right = expit(-lower) - expit(-upper)
    return np.where(right_tail, right, left)


def as_rows(values, rows: int) -> np.ndarray:
    """`values` as a float matrix with `rows` rows; keeps empty column counts intact"""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2 and arr.shape[0] == rows:
        return arr
    if arr.size == 0:
        return np.zeros((rows, 0))
    return arr.reshape(rows, -1)


def _check_thresholds(thresholds: np.ndarray) -> None:
    if thresholds.ndim != 1:
        raise NumericDomainError("thresholds must be a vector")
    _require_finite(thresholds, "thresholds")
    if np.any(np.diff(thresholds) <= 0):
        raise NumericDomainError(f"thresholds not strictly increasing: {thresholds}")


def ordinal_cdf(V: float, thresholds) -> np.ndarray:
    """P(level <= l) for l = 1..L-1"""
    thresholds = np.asarray(thresholds, dtype=float)
    _check_thresholds(thresholds)
    return logistic(thresholds - V)


def ordinal_probs(V: float, thresholds) -> np.ndarray:
    """Probabilities of the L ordered levels under an ordered logit with cut points `thresholds`"""
    thresholds = np.asarray(thresholds, dtype=float)
    _check_thresholds(thresholds)
    if not np.isfinite(V):
        raise NumericDomainError("ordinal_probs: non-finite utility")
    cuts = np.concatenate(([-np.inf], thresholds, [np.inf])) - V
    return interval_probs(cuts[:-1], cuts[1:])


def bfgs_maximize(obj: ObjectiveHandle, x0, tol: float = BFGS_DEFAULTS["choice_tol"],
                  max_iter: int = BFGS_DEFAULTS["choice_max_iter"]) -> BfgsResult:
    """Maximize obj.eval with BFGS and an Armijo backtracking line search.

    Ascent is run as descent on the negated objective. The inverse Hessian
    approximation starts at the identity, is rescaled after the first
    accepted step and skips updates that fail the curvature condition.
    """
    c1 = BFGS_DEFAULTS["armijo_c1"]
    shrink = BFGS_DEFAULTS["backtrack"]
    min_step = BFGS_DEFAULTS["min_step"]

    x = np.array(x0, dtype=float)
    fx = float(obj.eval(x))
    if not np.isfinite(fx):
        raise NumericDomainError("bfgs_maximize: objective not finite at the start point")
    g = np.asarray(obj.grad(x), dtype=float)
    n = x.size
    H = np.eye(n)
    first_update = True

    for it in range(max_iter):
        if np.max(np.abs(g), initial=0.0) <= tol:
            return BfgsResult(x, fx, True, it)

        direction = H @ g
        slope = float(g @ direction)
        if slope <= 0:
            # lost positive definiteness numerically; restart from steepest ascent
            H = np.eye(n)
            direction = g.copy()
            slope = float(g @ g)

        step = 1.0
        while True:
            x_new = x + step * direction
            f_new = float(obj.eval(x_new))
            if np.isfinite(f_new) and f_new >= fx + c1 * step * slope:
                break
            step *= shrink
            if step < min_step:
                logger.debug("bfgs_maximize: line search underflow at iteration %d", it)
                return BfgsResult(x, fx, False, it)

        g_new = np.asarray(obj.grad(x_new), dtype=float)
        s = x_new - x
        # gradient change of the minimized function -f
        y = g - g_new
        sy = float(s @ y)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if first_update:
                H = np.eye(n) * (sy / float(y @ y))
                first_update = False
            rho = 1.0 / sy
            Hy = H @ y
            H = (H - rho * (np.outer(s, Hy) + np.outer(Hy, s))
                 + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s))
        x, fx, g = x_new, f_new, g_new

    converged = bool(np.max(np.abs(g), initial=0.0) <= tol)
    return BfgsResult(x, fx, converged, max_iter)


def check_gradient(obj: ObjectiveHandle, x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |central difference|)"""
    x = np.array(x, dtype=float)
    analytic = np.asarray(obj.grad(x), dtype=float)
    worst = 0.0
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        numeric = (obj.eval(x + step) - obj.eval(x - step)) / (2.0 * h)
        err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
