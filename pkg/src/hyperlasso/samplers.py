"""Stochastic kernels used inside the Gibbs sweep.

Three independent pieces live here:

* a per-coordinate leapfrog HMC update for the active coefficient block,
  with stepsizes derived from a diagonal curvature estimate;
* adaptive rejection sampling (ARS) for one-dimensional log-concave
  densities, used for the variance conditionals of the "ghs" and "neg"
  families on the log scale (the "t" family conditional is exact
  inverse-gamma and is drawn directly);
* a random-walk Metropolis update of the shared log scale log(w).

Everything takes an explicit ``numpy.random.Generator`` so chains are
reproducible from a single seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import PriorSpec, log_prior_sigma2, v_of_delta

__all__ = [
    "BracketingError",
    "LogConcavityError",
    "HmcOutcome",
    "LogConcaveTarget",
    "leapfrog",
    "hmc_update",
    "compute_stepsizes",
    "sample_sigma2_ig",
    "sigma2_conditional_ghs",
    "sigma2_conditional_neg",
    "bracket_abscissae",
    "ars_sample",
    "update_log_w",
]


class BracketingError(RuntimeError):
    """Initial ARS abscissae do not enclose the mode on an unbounded side."""


class LogConcavityError(RuntimeError):
    """Target density exceeded its tangent hull; it is not log-concave."""


# ---------------------------------------------------------------------------
# Hamiltonian updates


@dataclass
class HmcOutcome:
    """Result of one HMC update of the active block."""

    new_delta: np.ndarray
    accepted: bool
    hamiltonian_delta: float
    trajectory_length: int
    divergent: bool = False


def leapfrog(q, p_mom, eps, grad):
    """One leapfrog step: half momentum kick, position drift, half kick.

    ``q``, ``p_mom`` and ``eps`` are arrays of one shape (stepsizes may
    broadcast); ``grad`` maps a position to the gradient of the potential.
    """
    p_half = p_mom - 0.5 * eps * grad(q)
    q_new = q + eps * p_half
    p_new = p_half - 0.5 * eps * grad(q_new)
    return q_new, p_new


def hmc_update(delta, active, ell, eps, potential, grad, rng) -> HmcOutcome:
    """Metropolis-corrected HMC update of the rows ``active`` of ``delta``.

    Parameters
    ----------
    delta : ndarray, shape (p+1, K)
        Current coefficient contrasts.  Never mutated; on rejection the
        outcome carries this same object back.
    active : ndarray of int
        Rows to update.  Momenta are standard normal per coordinate.
    ell : int
        Number of leapfrog steps.
    eps : ndarray
        Stepsizes, indexed by row like delta; a 1-D array gives one
        stepsize per row, a 2-D array one per coordinate.
    potential, grad : callables
        U and dU/dq on the active block, both taking a (len(active), K)
        array.
    rng : numpy.random.Generator

    Notes
    -----
    A non-finite state or Hamiltonian anywhere along the trajectory marks
    the update divergent and rejects it; the chain keeps running.
    """
    if ell < 1:
        raise ValueError("ell must be at least 1")
    active = np.asarray(active, dtype=int)
    q0 = delta[active]
    e = np.asarray(eps, dtype=float)[active]
    if e.ndim == 1:
        e = e[:, None]
    try:
        e = np.broadcast_to(e, q0.shape)
    except ValueError:
        raise ValueError("eps must broadcast row-wise to the active block") from None
    p0 = rng.standard_normal(q0.shape)
    u_accept = rng.random()

    u0 = potential(q0)
    h0 = u0 + 0.5 * float((p0 * p0).sum())
    q, p = q0, p0
    divergent = False
    steps = 0
    for _ in range(ell):
        q, p = leapfrog(q, p, e, grad)
        steps += 1
        if not np.isfinite(q).all():
            divergent = True
            break
    if not divergent:
        u1 = potential(q)
        h1 = u1 + 0.5 * float((p * p).sum())
        dh = h1 - h0
        if not math.isfinite(dh):
            divergent = True
    if divergent:
        return HmcOutcome(delta, False, math.inf, steps, True)
    accepted = dh <= 0.0 or u_accept < math.exp(-dh)
    if not accepted:
        return HmcOutcome(delta, False, dh, steps)
    new_delta = delta.copy()
    new_delta[active] = q
    return HmcOutcome(new_delta, True, dh, steps)


def compute_stepsizes(curvature, adjust: float, form: str = "sqrt") -> np.ndarray:
    """Leapfrog stepsizes from a per-coordinate curvature estimate.

    The default scales as ``adjust / sqrt(curvature)``, matching the units
    of a second derivative; ``form="reciprocal"`` gives ``adjust /
    curvature`` instead.
    """
    curvature = np.asarray(curvature, dtype=float)
    if not (np.isfinite(curvature).all() and (curvature > 0).all()):
        raise ValueError("curvature entries must be positive and finite")
    if not (adjust > 0 and math.isfinite(adjust)):
        raise ValueError("adjust must be positive")
    if form == "sqrt":
        return adjust / np.sqrt(curvature)
    if form == "reciprocal":
        return adjust / curvature
    raise ValueError(f"unknown stepsize form {form!r}")


# ---------------------------------------------------------------------------
# Variance conditionals

# The conditional of sigma2_j given delta_j depends on delta_j only through
# V = V(delta_j) and on the prior through (alpha, w).  For the t family it
# is inverse-gamma((alpha+K)/2, (alpha w + V)/2).  For ghs and neg the
# conditional is sampled on xi = log sigma2, where it is log-concave.


def _sample_sigma2_ig_from_v(v, k: int, alpha: float, w: float, rng) -> np.ndarray:
    shape = 0.5 * (alpha + k)
    rate = 0.5 * (alpha * w + np.asarray(v, dtype=float))
    # 1/Gamma(shape, rate): numpy's gamma takes a scale, i.e. mean shape*scale
    return rate / rng.gamma(shape, 1.0, size=rate.shape)


def sample_sigma2_ig(delta_j, c: int, alpha: float, w: float, rng) -> float:
    """Exact inverse-gamma draw of sigma2_j for the t family."""
    v = v_of_delta(delta_j, c)
    return float(_sample_sigma2_ig_from_v(np.array([v]), c - 1, alpha, w, rng)[0])


@dataclass
class LogConcaveTarget:
    """A log-concave density known up to a constant, for ARS.

    ``log_density`` and ``log_density_derivative`` are scalar callables;
    the domain is the open interval (lower, upper).
    """

    log_density: Callable[[float], float]
    log_density_derivative: Callable[[float], float]
    lower: float = -math.inf
    upper: float = math.inf


def _exp_clip(t: float) -> float:
    """exp that saturates to inf instead of raising OverflowError."""
    return math.inf if t > 709.0 else math.exp(t)


def _log1pexp(t: float) -> float:
    """log(1 + e^t), stable for any t."""
    if t > 0:
        return t + math.log1p(math.exp(-t))
    return math.log1p(math.exp(t))


def _sigmoid(t: float) -> float:
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    et = math.exp(t)
    return et / (1.0 + et)


def _xi_target(v: float, lin: float, c2: float, lscale: float) -> LogConcaveTarget:
    """Shared xi = log(sigma2) conditional kernel.

    log g(xi) = lin * xi - (V/2) e^{-xi} - c2 * log(1 + e^{xi - lscale}),
    concave in xi because both nonlinear terms have nonpositive second
    derivatives.
    """
    lvh = math.log(0.5 * v)

    def logg(xi: float) -> float:
        return lin * xi - _exp_clip(lvh - xi) - c2 * _log1pexp(xi - lscale)

    def dlogg(xi: float) -> float:
        return lin + _exp_clip(lvh - xi) - c2 * _sigmoid(xi - lscale)

    return LogConcaveTarget(logg, dlogg)


def sigma2_conditional_ghs(delta_j, c: int, alpha: float, w: float) -> LogConcaveTarget:
    """Conditional of xi = log(sigma2_j) under the generalized horseshoe.

    Combines the K-variate normal kernel of delta_j with the ghs variance
    density and the Jacobian of the log transform:

        log g(xi) = (1-K)/2 * xi - (V/2) e^{-xi}
                    - (alpha+1)/2 * log(1 + e^xi / (alpha w))
    """
    v = v_of_delta(delta_j, c)
    return _ghs_xi_target(v, c - 1, alpha, w)


def _ghs_xi_target(v: float, k: int, alpha: float, w: float) -> LogConcaveTarget:
    return _xi_target(v, 0.5 * (1.0 - k), 0.5 * (alpha + 1.0), math.log(alpha * w))


def sigma2_conditional_neg(delta_j, c: int, alpha: float, w: float) -> LogConcaveTarget:
    """Conditional of xi = log(sigma2_j) under normal-exponential-gamma.

        log g(xi) = (1 - K/2) * xi - (V/2) e^{-xi}
                    - (alpha/2 + 1) * log(1 + e^xi / lambda),  lambda = alpha w / 2
    """
    v = v_of_delta(delta_j, c)
    return _neg_xi_target(v, c - 1, alpha, w)


def _neg_xi_target(v: float, k: int, alpha: float, w: float) -> LogConcaveTarget:
    return _xi_target(v, 1.0 - 0.5 * k, 0.5 * alpha + 1.0, math.log(0.5 * alpha * w))


def bracket_abscissae(target: LogConcaveTarget, center: float, step: float = 2.0,
                      max_expand: int = 60) -> tuple[float, float, float]:
    """Three starting abscissae around ``center`` that satisfy ARS.

    On an unbounded side, doubles the offset until the hull slope has the
    right sign there (positive on the left, negative on the right), then
    pulls the point back inside the region where the log density is
    finite.  Raises BracketingError when no such point exists, e.g. for an
    improper target.
    """
    lo, hi = center, center
    if target.lower == -math.inf:
        s = step
        lo = center - s
        for _ in range(max_expand):
            if target.log_density_derivative(lo) > 0:
                break
            s *= 2.0
            lo = center - s
        else:
            raise BracketingError("no positive slope found expanding left")
        while not math.isfinite(target.log_density(lo)):
            lo = 0.5 * (lo + center)
            if target.log_density_derivative(lo) <= 0:
                raise BracketingError("left tail too sharp to bracket")
    else:
        lo = max(center - step, 0.5 * (target.lower + center))
    if target.upper == math.inf:
        s = step
        hi = center + s
        for _ in range(max_expand):
            if target.log_density_derivative(hi) < 0:
                break
            s *= 2.0
            hi = center + s
        else:
            raise BracketingError("no negative slope found expanding right")
        while not math.isfinite(target.log_density(hi)):
            hi = 0.5 * (hi + center)
            if target.log_density_derivative(hi) >= 0:
                raise BracketingError("right tail too sharp to bracket")
    else:
        hi = min(center + step, 0.5 * (center + target.upper))
    return lo, center, hi


def _log1mexp(u: float) -> float:
    """log(1 - e^u) for u <= 0."""
    if u >= 0.0:
        return -math.inf if u == 0.0 else math.nan
    if u > -0.6931471805599453:
        return math.log(-math.expm1(u))
    return math.log1p(-math.exp(u))


class _Hull:
    """Piecewise-linear tangent envelope of a concave log density.

    Keeps support points sorted; the upper hull is the minimum of the
    tangents, with breakpoints z between consecutive points, and the
    lower (squeeze) hull is the chord interpolant.
    """

    MAX_POINTS = 64

    def __init__(self, x, h, dh, lower, upper):
        order = np.argsort(x)
        self.x = np.asarray(x, dtype=float)[order]
        self.h = np.asarray(h, dtype=float)[order]
        self.dh = np.asarray(dh, dtype=float)[order]
        self.lower = lower
        self.upper = upper

    def _breaks(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints with a mask marking true tangent crossings.

        Crossings are computed in the shifted frame (offset from the left
        support point) so that wall tangents, whose slopes reach 1e300 or
        so when a tail draw lands deep in a conditional's wall, never
        overflow the ``h - dh*x`` absolute form.  Near-parallel tangents
        and crossings that land outside the span fall back to the segment
        midpoint, masked False.  For a concave target every tangent bounds
        the density globally, so any breakpoint inside the span keeps the
        envelope valid; crossings just make it tight.
        """
        x, h, dh = self.x, self.h, self.dh
        dx = x[1:] - x[:-1]
        den = dh[:-1] - dh[1:]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            zi = x[:-1] + ((h[1:] - h[:-1]) - dh[1:] * dx) / den
        exact = (den > 1e-300) & np.isfinite(zi) & (zi >= x[:-1]) & (zi <= x[1:])
        zi = np.where(exact, zi, 0.5 * (x[:-1] + x[1:]))
        return np.concatenate(([self.lower], zi, [self.upper])), exact

    def z(self) -> np.ndarray:
        """Breakpoints of the upper hull, including the domain ends."""
        return self._breaks()[0]

    def upper_at(self, xv: float) -> float:
        z = self.z()
        i = int(np.searchsorted(z[1:-1], xv, side="right"))
        return float(self.h[i]) + float(self.dh[i]) * (xv - float(self.x[i]))

    def _height_at_break(self, i: int, zv: float, j) -> float:
        """Envelope height of segment ``i`` at breakpoint ``zv``.

        ``j`` names the segment on the far side when ``zv`` is a true
        crossing (None otherwise).  Both tangents meet at a crossing, so
        the height can be read off either; a wall tangent cancels
        catastrophically in its own frame (h near -1e306 against a rise
        near +1e306) while the neighbour stays accurate, and cancellation
        garbage is always astronomically large, so the smaller magnitude
        wins.
        """
        x, h, dh = self.x, self.h, self.dh
        own = float(h[i]) + float(dh[i]) * (zv - float(x[i]))
        if j is None:
            return own
        alt = float(h[j]) + float(dh[j]) * (zv - float(x[j]))
        if not math.isfinite(own):
            return alt if math.isfinite(alt) else own
        if math.isfinite(alt) and abs(alt) < abs(own):
            return alt
        return own

    def lower_at(self, xv: float) -> float:
        x, h = self.x, self.h
        if xv < x[0] or xv > x[-1]:
            return -math.inf
        i = int(np.searchsorted(x, xv, side="right"))
        if i == 0:
            return float(h[0])
        if i == len(x):
            return float(h[-1])
        t = (xv - x[i - 1]) / (x[i] - x[i - 1])
        return float((1.0 - t) * h[i - 1] + t * h[i])

    # Stand-in for a tangent top that overflowed: large enough to dominate
    # every honest segment, finite so the refinement loop keeps running.
    CAPPED_TOP = 1e300

    def _log_masses(self, z: np.ndarray, exact: np.ndarray) -> np.ndarray:
        x, h = self.x, self.h
        n = len(x)
        out = np.empty(n)
        for i in range(n):
            a = float(self.dh[i])
            zl, zr = float(z[i]), float(z[i + 1])
            width = zr - zl
            if width <= 0.0:
                out[i] = -math.inf
            elif abs(a) < 1e-13 or (math.isfinite(width) and width < 1e-12 / abs(a)):
                if not math.isfinite(width):
                    raise BracketingError("flat envelope segment with infinite width")
                out[i] = float(h[i]) + math.log(width)
            elif a > 0:
                if math.isinf(zr):
                    out[i] = math.inf  # rises toward an open end: unbounded
                    continue
                j = i + 1 if i + 1 < n and exact[i] else None
                top = self._height_at_break(i, zr, j)
                if math.isinf(top):
                    top = self.CAPPED_TOP
                out[i] = top + _log1mexp(-(a * width)) - math.log(a)
            else:
                if math.isinf(zl):
                    out[i] = math.inf
                    continue
                j = i - 1 if i >= 1 and exact[i - 1] else None
                top = self._height_at_break(i, zl, j)
                if math.isinf(top):
                    top = self.CAPPED_TOP
                out[i] = top + _log1mexp(a * width) - math.log(-a)
        return out

    def sample(self, rng) -> float:
        z, exact = self._breaks()
        logm = self._log_masses(z, exact)
        m = logm.max()
        if not math.isfinite(m):
            raise BracketingError("envelope has unbounded mass")
        wts = np.exp(logm - m)
        cum = np.cumsum(wts)
        total = cum[-1]
        i = int(np.searchsorted(cum, rng.random() * total, side="right"))
        i = min(i, len(wts) - 1)
        a = float(self.dh[i])
        zl, zr = float(z[i]), float(z[i + 1])
        u = rng.random()
        width = zr - zl
        if abs(a) < 1e-13 or (math.isfinite(width) and width < 1e-12 / abs(a)):
            xv = zl + u * width
        elif a > 0:
            t = math.exp(-(a * width)) if math.isfinite(a * width) else 0.0
            xv = zr + math.log(u + (1.0 - u) * t) / a
        else:
            t = math.exp(a * width) if math.isfinite(a * width) else 0.0
            xv = zl + math.log(u + (1.0 - u) * t) / a
        # roundoff can put xv a hair outside the domain
        if xv <= self.lower:
            xv = np.nextafter(self.lower, math.inf)
        elif xv >= self.upper:
            xv = np.nextafter(self.upper, -math.inf)
        return float(xv)

    def insert(self, xv: float, hv: float, dhv: float) -> None:
        if len(self.x) >= self.MAX_POINTS or not math.isfinite(hv) or not math.isfinite(dhv):
            return
        i = int(np.searchsorted(self.x, xv))
        for j in (i - 1, i):
            if 0 <= j < len(self.x) and abs(self.x[j] - xv) < 1e-12:
                return
        self.x = np.insert(self.x, i, xv)
        self.h = np.insert(self.h, i, hv)
        self.dh = np.insert(self.dh, i, dhv)


def ars_sample(target: LogConcaveTarget, init_abscissae, rng, max_iter: int = 1000,
               envelope_tol: float = 1e-8) -> float:
    """One exact draw from a log-concave target by adaptive rejection.

    Parameters
    ----------
    target : LogConcaveTarget
    init_abscissae : sequence of float
        Starting support points inside the domain, typically three.  On an
        unbounded side the outermost point must put the mode inside the
        hull (positive slope on the far left, negative on the far right);
        otherwise BracketingError is raised.
    rng : numpy.random.Generator

    Raises
    ------
    LogConcavityError
        If the density pokes above its tangent hull by more than
        ``envelope_tol`` anywhere it is evaluated.
    """
    xs = np.unique(np.asarray(init_abscissae, dtype=float))
    if xs.size < 2:
        raise ValueError("need at least two distinct starting abscissae")
    if xs[0] <= target.lower or xs[-1] >= target.upper:
        raise ValueError("starting abscissae must lie strictly inside the domain")
    h = np.array([target.log_density(x) for x in xs])
    dh = np.array([target.log_density_derivative(x) for x in xs])
    if not (np.isfinite(h).all() and np.isfinite(dh).all()):
        raise ValueError("log density must be finite at the starting abscissae")
    if target.lower == -math.inf and dh[0] <= 0:
        raise BracketingError("leftmost abscissa needs positive slope on an unbounded side")
    if target.upper == math.inf and dh[-1] >= 0:
        raise BracketingError("rightmost abscissa needs negative slope on an unbounded side")
    hull = _Hull(xs, h, dh, target.lower, target.upper)
    for _ in range(max_iter):
        xv = hull.sample(rng)
        u = rng.random()
        uv = hull.upper_at(xv)
        if u <= math.exp(hull.lower_at(xv) - uv):
            return xv
        hv = target.log_density(xv)
        if hv > uv + envelope_tol:
            raise LogConcavityError(
                f"log density at {xv!r} exceeds its tangent hull by {hv - uv:.3g}"
            )
        if u <= math.exp(min(hv - uv, 0.0)):
            return xv
        hull.insert(xv, hv, target.log_density_derivative(xv))
    raise RuntimeError(f"ARS did not accept within {max_iter} proposals")


# ---------------------------------------------------------------------------
# Shared scale update

_LOG_W_PRIOR_VAR = 100.0


def update_log_w(sigma2, prior: PriorSpec, current_log_w: float, rng,
                 proposal_sd: float = 0.3) -> float:
    """Random-walk Metropolis step on log(w) given all variances.

    The target is the product of the variance prior over features times a
    N(0, 100) prior on log(w).  With ``proposal_sd=0`` the proposal equals
    the current point and is always accepted.
    """
    sigma2 = np.asarray(sigma2, dtype=float)

    def logpost(lw: float) -> float:
        lp = float(np.sum(log_prior_sigma2(sigma2, prior, log_w=lw)))
        return lp - lw * lw / (2.0 * _LOG_W_PRIOR_VAR)

    proposal = current_log_w + proposal_sd * rng.standard_normal()
    log_acc = logpost(proposal) - logpost(current_log_w)
    if log_acc >= 0.0 or rng.random() < math.exp(log_acc):
        return float(proposal)
    return float(current_log_w)
