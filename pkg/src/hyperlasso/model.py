"""Model mathematics for multinomial logistic regression with shrinkage priors.

The classifier over C classes is parameterized by identifiable contrasts
``delta[j, k] = beta[j, k+1] - beta[j, 1]``, stored as a (p+1, K) matrix with
K = C - 1.  Row 0 holds the intercept contrasts and rows 1..p the feature
contrasts.  Class 1 is the reference, so the linear predictor of class k+1 is
``delta[0, k] + x @ delta[1:, k]`` and the predictor of class 1 is zero.

Each feature row j >= 1 carries its own variance sigma2[j] under a symmetric
Gaussian prior on the per-class coefficients; marginalizing the reference
constraint leaves a K-variate normal on delta[j] whose quadratic form is
V(delta_j) / sigma2[j], with

    V(d) = sum_k d_k^2 - (sum_k d_k)^2 / C.

The hierarchy placed on sigma2 selects the shrinkage family: inverse-gamma
mixing gives t-distributed coefficients, and the "ghs" / "neg" families give
generalized horseshoe and normal-exponential-gamma tails.  The intercept
variance sigma0_sq is fixed, never sampled.

All densities are handled on the log scale and class probabilities use
max-subtraction, so nothing here exponentiates an unbounded quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

__all__ = [
    "FAMILIES",
    "Dataset",
    "PriorSpec",
    "v_of_delta",
    "sdb",
    "class_probs",
    "log_likelihood",
    "neg_log_prior_delta",
    "grad_u",
    "curvature_estimate",
    "log_prior_sigma2",
]

FAMILIES = ("t", "ghs", "neg")


@dataclass(frozen=True)
class Dataset:
    """Classification data: features ``x`` (n, p) and labels ``y`` in 1..c.

    Parameters
    ----------
    x : ndarray, shape (n, p)
        Feature matrix, finite floats.
    y : ndarray, shape (n,)
        Integer class labels, values in 1..c.
    c : int
        Number of classes, at least 2.
    """

    x: np.ndarray
    y: np.ndarray
    c: int

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=int)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"x must be a nonempty 2-D matrix, got shape {np.shape(self.x)}")
        if y.shape != (x.shape[0],):
            raise ValueError("y must be a vector with one label per row of x")
        if not np.isfinite(x).all():
            raise ValueError("x contains non-finite values")
        if int(self.c) < 2:
            raise ValueError("need at least two classes")
        if y.size and (y.min() < 1 or y.max() > self.c):
            raise ValueError(f"labels must lie in 1..{self.c}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "c", int(self.c))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def k(self) -> int:
        """Number of contrasts, c - 1."""
        return self.c - 1


@dataclass(frozen=True)
class PriorSpec:
    """Shrinkage prior on the feature contrasts.

    Parameters
    ----------
    family : str
        One of "t" (inverse-gamma mixing), "ghs" (generalized horseshoe)
        or "neg" (normal-exponential-gamma).
    alpha : float
        Tail-heaviness degrees of freedom, > 0.  Smaller is heavier.
    log_w : float
        Log of the squared scale w.  When ``w_sampled`` this is the
        starting value; otherwise it is held fixed.
    w_sampled : bool
        Update log(w) during sampling under a N(0, 100) prior.
    sigma0_sq : float
        Fixed intercept variance, never sampled.
    """

    family: str = "t"
    alpha: float = 1.0
    log_w: float = -10.0
    w_sampled: bool = False
    sigma0_sq: float = 2000.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown prior family {self.family!r}, expected one of {FAMILIES}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError("alpha must be positive and finite")
        if not math.isfinite(self.log_w):
            raise ValueError("log_w must be finite")
        if not (self.sigma0_sq > 0 and math.isfinite(self.sigma0_sq)):
            raise ValueError("sigma0_sq must be positive and finite")

    @property
    def w(self) -> float:
        return math.exp(self.log_w)


def v_of_delta(delta_j, c: int) -> float:
    """Prior quadratic form V of one contrast row.

    ``V(d) = sum_k d_k^2 - (sum_k d_k)^2 / c``, which equals the sum of
    squared deviations of the implied per-class coefficients around their
    mean, so it is invariant to the choice of reference class.
    """
    d = np.asarray(delta_j, dtype=float)
    if d.ndim != 1 or d.shape[0] != c - 1:
        raise ValueError(f"delta_j must be a vector of length c-1={c - 1}")
    if not np.isfinite(d).all():
        raise ValueError("delta_j contains non-finite values")
    s = d.sum()
    return float(d @ d - s * s / c)


def _v_rows(delta: np.ndarray, c: int) -> np.ndarray:
    """V of every row of a (rows, K) contrast matrix, vectorized."""
    s = delta.sum(axis=1)
    return (delta * delta).sum(axis=1) - s * s / c


def sdb(delta_j, c: int) -> float:
    """Standard deviation of the per-class coefficients, sqrt(V/c).

    The importance measure used for feature ranking.  For c = 2 it reduces
    to |delta| / 2.
    """
    return math.sqrt(v_of_delta(delta_j, c) / c)


def _linear_predictors(x: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """(n, K) linear predictors of classes 2..C; class 1 is identically 0."""
    return delta[0] + x @ delta[1:]


def _probs_from_eta(eta: np.ndarray) -> np.ndarray:
    """Class probabilities (n, C) from contrast predictors, max-stabilized."""
    n = eta.shape[0]
    full = np.concatenate([np.zeros((n, 1)), eta], axis=1)
    with np.errstate(invalid="ignore"):
        full -= full.max(axis=1, keepdims=True)
        ex = np.exp(full)
        return ex / ex.sum(axis=1, keepdims=True)


def _loglik_from_eta(eta: np.ndarray, y: np.ndarray) -> float:
    """Multinomial log likelihood given precomputed predictors."""
    n = eta.shape[0]
    full = np.concatenate([np.zeros((n, 1)), eta], axis=1)
    m = full.max(axis=1)
    logden = m + np.log(np.exp(full - m[:, None]).sum(axis=1))
    return float((full[np.arange(n), y - 1] - logden).sum())


def class_probs(x_row, delta) -> np.ndarray:
    """Class probabilities for one case or a matrix of cases.

    Parameters
    ----------
    x_row : ndarray, shape (p,) or (n, p)
        Feature vector(s), without the leading 1.
    delta : ndarray, shape (p+1, K)
        Contrast matrix; row 0 is the intercept.

    Returns
    -------
    ndarray, shape (C,) or (n, C)
        Probabilities summing to 1 along the class axis.

    Raises
    ------
    FloatingPointError
        If the probabilities come out non-finite, which can only happen
        when delta itself is non-finite.
    """
    x = np.asarray(x_row, dtype=float)
    delta = np.asarray(delta, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[1] != delta.shape[0] - 1:
        raise ValueError(
            f"feature count {x2.shape[1]} does not match delta rows {delta.shape[0]} (p+1)"
        )
    probs = _probs_from_eta(_linear_predictors(x2, delta))
    if not np.isfinite(probs).all():
        raise FloatingPointError("non-finite class probabilities")
    return probs[0] if single else probs


def log_likelihood(data: Dataset, delta: np.ndarray) -> float:
    """Multinomial log likelihood of ``delta`` on ``data``."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (data.p + 1, data.k):
        raise ValueError(f"delta must have shape {(data.p + 1, data.k)}, got {delta.shape}")
    return _loglik_from_eta(_linear_predictors(data.x, delta), data.y)


def _sigma2_full(sigma2: np.ndarray, prior: PriorSpec, p: int) -> np.ndarray:
    sigma2 = np.asarray(sigma2, dtype=float)
    if sigma2.shape != (p,):
        raise ValueError(f"sigma2 must have shape ({p},), got {sigma2.shape}")
    if not (np.isfinite(sigma2).all() and (sigma2 > 0).all()):
        raise ValueError("sigma2 entries must be positive and finite")
    return np.concatenate(([prior.sigma0_sq], sigma2))


def neg_log_prior_delta(delta: np.ndarray, sigma2: np.ndarray, prior: PriorSpec) -> float:
    """Negative log density of delta given the variances, up to a constant.

    Sums ``(K/2) log(2 pi sigma2_j) + V(delta_j) / (2 sigma2_j)`` over all
    rows including the intercept (whose variance is ``prior.sigma0_sq``).
    The constant determinant of the contrast covariance factor is dropped;
    it cancels in every conditional the samplers use.
    """
    delta = np.asarray(delta, dtype=float)
    k = delta.shape[1]
    sig = _sigma2_full(sigma2, prior, delta.shape[0] - 1)
    v = _v_rows(delta, k + 1)
    return float(np.sum(0.5 * k * np.log(2.0 * math.pi * sig) + v / (2.0 * sig)))


def _onehot_tail(y: np.ndarray, c: int) -> np.ndarray:
    """Indicator matrix (n, C-1) of classes 2..C."""
    n = y.shape[0]
    out = np.zeros((n, c - 1))
    rows = np.flatnonzero(y > 1)
    out[rows, y[rows] - 2] = 1.0
    return out


def _grad_prior_rows(block: np.ndarray, sig: np.ndarray, c: int) -> np.ndarray:
    """Prior part of dU/d(delta) for the given rows: (d - mean-shift) / sigma2."""
    return (block - block.sum(axis=1, keepdims=True) / c) / sig[:, None]


def grad_u(data: Dataset, delta: np.ndarray, sigma2: np.ndarray, prior: PriorSpec,
           active: np.ndarray) -> np.ndarray:
    """Gradient of the potential U = -log lik - log prior on the active rows.

    Parameters
    ----------
    active : ndarray of int
        Sorted row indices into delta; must contain 0 (the intercept row
        is always updated).

    Returns
    -------
    ndarray, shape (len(active), K)
        Row ``a`` is dU/d(delta[active[a]]).  The likelihood part of entry
        (j, k) is sum_i x_ij (P(y_i = k+1) - 1[y_i = k+1]); the prior part
        is (delta_jk - sum_k' delta_jk' / C) / sigma2_j.
    """
    delta = np.asarray(delta, dtype=float)
    active = np.asarray(active, dtype=int)
    if active.ndim != 1 or active.size == 0 or 0 not in active:
        raise ValueError("active must be a nonempty index vector containing 0")
    if active.min() < 0 or active.max() > data.p:
        raise ValueError("active indices out of range")
    sig = _sigma2_full(sigma2, prior, data.p)
    probs = _probs_from_eta(_linear_predictors(data.x, delta))
    resid = probs[:, 1:] - _onehot_tail(data.y, data.c)
    x1 = np.concatenate([np.ones((data.n, 1)), data.x], axis=1)
    g = x1[:, active].T @ resid
    g += _grad_prior_rows(delta[active], sig[active], data.c)
    return g


def _curvature_cols(colsq: np.ndarray, sig_full: np.ndarray, c: int) -> np.ndarray:
    """Per-row curvature estimate shared by the public op and the sweep."""
    return colsq / 4.0 + ((c - 1.0) / c) / sig_full


def curvature_estimate(data: Dataset, sigma2: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Diagonal second-derivative estimate of U, one value per coordinate.

    Entry (j, k) is ``sum_i x_ij^2 / 4 + ((C-1)/C) / sigma2_j``, the
    logistic curvature bound plus the prior precision.  Constant in k; the
    matrix shape simply matches delta so stepsizes can be indexed the same
    way.
    """
    sig = _sigma2_full(sigma2, prior, data.p)
    colsq = np.concatenate(([float(data.n)], (data.x * data.x).sum(axis=0)))
    col = _curvature_cols(colsq, sig, data.c)
    return np.broadcast_to(col[:, None], (data.p + 1, data.k)).copy()


def log_prior_sigma2(sigma2_j, prior: PriorSpec, log_w: float | None = None):
    """Normalized log density of the variance prior at sigma2_j.

    Supports scalar or array input.  ``log_w`` overrides ``prior.log_w``,
    which the scale updater uses to score candidate values of w.

    Families
    --------
    t    : inverse-gamma(alpha/2, alpha w / 2)
    ghs  : density proportional to (sigma2)^{-1/2} (1 + sigma2/(alpha w))^{-(alpha+1)/2}
    neg  : (kappa/lambda) (1 + sigma2/lambda)^{-(kappa+1)} with
           kappa = alpha/2, lambda = alpha w / 2
    """
    s = np.asarray(sigma2_j, dtype=float)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    if not (np.isfinite(s).all() and (s > 0).all()):
        raise ValueError("sigma2 must be positive and finite")
    lw = prior.log_w if log_w is None else float(log_w)
    w = math.exp(lw)
    a = prior.alpha
    if prior.family == "t":
        sh = 0.5 * a
        rate = 0.5 * a * w
        out = sh * math.log(rate) - gammaln(sh) - (sh + 1.0) * np.log(s) - rate / s
    elif prior.family == "ghs":
        out = (
            gammaln(0.5 * (a + 1.0))
            - gammaln(0.5 * a)
            - 0.5 * math.log(a * math.pi)
            - 0.5 * lw
            - 0.5 * np.log(s)
            - 0.5 * (a + 1.0) * np.log1p(s / (a * w))
        )
    else:
        lam = 0.5 * a * w
        out = math.log(0.5 * a / lam) - (0.5 * a + 1.0) * np.log1p(s / lam)
    return float(out[0]) if scalar else out
