"""Two-phase restricted Gibbs sampler for the shrinkage logit model.

Each sweep runs three steps:

1. one HMC update of the coefficient rows whose prior sd exceeds the
   restriction threshold zeta (the intercept row is always active), with
   per-coordinate stepsizes refreshed from the curvature estimate;
2. a draw of every feature variance from its conditional given the new
   coefficients (exact inverse-gamma for the t family, ARS on the log
   scale for ghs and neg);
3. when the prior asks for it, a Metropolis update of the shared log
   scale log(w).

The chain runs an initial phase of ``n1`` sweeps with trajectory length
``ell1`` that is never recorded, then ``n2`` sampling sweeps with length
``ell2`` recording every ``thin``-th state.  Inactive coefficient rows are
carried through step 1 untouched, which keeps the per-sweep cost
proportional to the active set once most noise features have shrunk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    Dataset,
    PriorSpec,
    _curvature_cols,
    _grad_prior_rows,
    _loglik_from_eta,
    _onehot_tail,
    _probs_from_eta,
    _v_rows,
    neg_log_prior_delta,
)
from .samplers import (
    _ghs_xi_target,
    _neg_xi_target,
    _sample_sigma2_ig_from_v,
    ars_sample,
    bracket_abscissae,
    compute_stepsizes,
    hmc_update,
    update_log_w,
)

__all__ = [
    "SamplerSettings",
    "ChainState",
    "ChainDiagnostics",
    "ChainRecord",
    "ChainDivergenceError",
    "init_delta",
    "init_sigma2",
    "active_set",
    "gibbs_sweep",
    "run_chain",
]

# a chain stuck rejecting for this many consecutive sweeps is aborted
MAX_CONSECUTIVE_REJECTIONS = 1000


class ChainDivergenceError(RuntimeError):
    """The sampler stopped making progress (too many consecutive rejections)."""


@dataclass(frozen=True)
class SamplerSettings:
    """Chain schedule and tuning knobs.

    Parameters
    ----------
    n1, ell1 : int
        Number of initial-phase sweeps and their trajectory length.
    n2, ell2 : int
        Number of sampling sweeps and their trajectory length.
    adjust : float
        Stepsize multiplier applied to 1/sqrt(curvature).
    zeta : float
        Restriction threshold on the prior sd scale; features with
        sqrt(sigma2_j) <= zeta sit out the coefficient update.
    thin : int
        Record every thin-th sampling sweep.
    seed : int
        Seed of the chain's random stream.
    """

    n1: int = 1000
    ell1: int = 10
    n2: int = 5000
    ell2: int = 50
    adjust: float = 0.3
    zeta: float = 0.0
    thin: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.n1, self.n2) < 0:
            raise ValueError("sweep counts must be nonnegative")
        if min(self.ell1, self.ell2) < 1:
            raise ValueError("trajectory lengths must be at least 1")
        if not (self.adjust > 0 and math.isfinite(self.adjust)):
            raise ValueError("adjust must be positive")
        if self.zeta < 0:
            raise ValueError("zeta must be nonnegative")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")


@dataclass
class ChainState:
    """Current chain position: contrasts, feature variances, log scale."""

    delta: np.ndarray
    sigma2: np.ndarray
    log_w: float


@dataclass
class ChainDiagnostics:
    """Per-sweep arrays covering both phases."""

    sweep: np.ndarray
    phase: np.ndarray       # 0 initial, 1 sampling
    accepted: np.ndarray
    delta_h: np.ndarray
    active_size: np.ndarray
    u: np.ndarray           # potential of the state at the end of the sweep

    def acceptance_rate(self, phase: int | None = 1) -> float:
        mask = slice(None) if phase is None else self.phase == phase
        sel = self.accepted[mask]
        return float(sel.mean()) if sel.size else math.nan


@dataclass
class ChainRecord:
    """Thinned sampling-phase draws plus diagnostics."""

    delta_draws: np.ndarray    # (n_draws, p+1, K)
    sigma2_draws: np.ndarray   # (n_draws, p)
    log_w_draws: np.ndarray    # (n_draws,)
    diagnostics: ChainDiagnostics

    @property
    def n_draws(self) -> int:
        return self.delta_draws.shape[0]

    @property
    def c(self) -> int:
        return self.delta_draws.shape[2] + 1


def init_delta(data: Dataset, prior: PriorSpec) -> np.ndarray:
    """Gaussian discriminant starting point for the contrasts.

    Fits per-class means with a pooled within-class covariance blended
    half-and-half with the identity, and converts the implied linear
    discriminant coefficients to contrasts against class 1.  Keeping the
    full covariance matters: a feature whose marginal and conditional
    effects have opposite signs starts on the correct side of zero, where
    the shrinkage prior would otherwise pin it.  For p >= n the inverse
    is applied through the Woodbury identity so only an n-by-n system is
    ever solved.
    """
    n, p, c = data.n, data.p, data.c
    counts = np.bincount(data.y, minlength=c + 1)[1:]
    if (counts == 0).any():
        missing = int(np.flatnonzero(counts == 0)[0] + 1)
        raise ValueError(f"class {missing} has no cases; cannot initialize")
    means = np.empty((c, p))
    for cls in range(c):
        means[cls] = data.x[data.y == cls + 1].mean(axis=0)
    centered = data.x - means[data.y - 1]
    dof = max(n - c, 1)
    if p < n:
        cov = 0.5 * (centered.T @ centered) / dof + 0.5 * np.eye(p)
        slopes = np.linalg.solve(cov, means.T)        # (p, c)
    else:
        # (I/2 + C'C/(2 dof))^{-1} M = 2 (M - C'(dof I + CC')^{-1} C M)
        gram = dof * np.eye(n) + centered @ centered.T
        cm = centered @ means.T
        slopes = 2.0 * (means.T - centered.T @ np.linalg.solve(gram, cm))
    quad = np.einsum("cp,pc->c", means, slopes)
    b0 = np.log(counts / n) - 0.5 * quad
    delta = np.empty((p + 1, c - 1))
    delta[0] = b0[1:] - b0[0]
    delta[1:] = slopes[:, 1:] - slopes[:, :1]
    return delta


def init_sigma2(delta: np.ndarray, prior: PriorSpec) -> np.ndarray:
    """Starting variances: the larger of V(delta_j)/K and w."""
    k = delta.shape[1]
    v = _v_rows(delta[1:], k + 1)
    return np.maximum(v / k, prior.w)


def active_set(sigma2: np.ndarray, zeta: float) -> np.ndarray:
    """Rows updated by HMC: the intercept plus features with sd above zeta."""
    return np.concatenate(([0], np.flatnonzero(np.sqrt(sigma2) > zeta) + 1))


class _Workspace:
    """Per-chain caches: design matrix with intercept, label codes, eta."""

    def __init__(self, data: Dataset):
        self.data = data
        self.x1 = np.concatenate([np.ones((data.n, 1)), data.x], axis=1)
        self.y = data.y
        self.y_tail = _onehot_tail(data.y, data.c)
        self.colsq = (self.x1 * self.x1).sum(axis=0)
        self.eta = None


class _RestrictedPotential:
    """Potential and gradient of the active block, inactive rows cached.

    eta splits as (inactive contribution) + x_active @ block; only the
    second term moves during a trajectory, so each evaluation costs one
    (n × active) product.
    """

    def __init__(self, ws: _Workspace, delta: np.ndarray, sig_full: np.ndarray,
                 active: np.ndarray, c: int):
        self.xa = ws.x1[:, active]
        self.y = ws.y
        self.y_tail = ws.y_tail
        self.eta_rest = ws.eta - self.xa @ delta[active]
        self.sig = sig_full[active]
        self.c = c
        self.last_eta = None

    def _eta(self, block: np.ndarray) -> np.ndarray:
        eta = self.eta_rest + self.xa @ block
        self.last_eta = eta
        return eta

    def value(self, block: np.ndarray) -> float:
        eta = self._eta(block)
        v = _v_rows(block, self.c)
        return -_loglik_from_eta(eta, self.y) + float((v / (2.0 * self.sig)).sum())

    def grad(self, block: np.ndarray) -> np.ndarray:
        probs = _probs_from_eta(self._eta(block))
        g = self.xa.T @ (probs[:, 1:] - self.y_tail)
        g += _grad_prior_rows(block, self.sig, self.c)
        return g


@dataclass
class SweepInfo:
    accepted: bool
    delta_h: float
    active_size: int
    u: float
    divergent: bool = False


# variance conditionals are degenerate at V = 0 exactly (improper on the
# log scale); the floor corresponds to |delta| ~ 1e-150 and changes nothing
_V_FLOOR = 1e-300


def _draw_sigma2(v: np.ndarray, k: int, prior: PriorSpec, w: float, rng) -> np.ndarray:
    if prior.family == "t":
        return _sample_sigma2_ig_from_v(v, k, prior.alpha, w, rng)
    make = _ghs_xi_target if prior.family == "ghs" else _neg_xi_target
    out = np.empty(v.shape)
    aw = prior.alpha * w
    for j, vj in enumerate(v):
        vj = max(vj, _V_FLOOR)
        target = make(vj, k, prior.alpha, w)
        center = math.log(vj / k + aw)
        xi = ars_sample(target, bracket_abscissae(target, center), rng)
        out[j] = math.exp(xi)
    return out


def gibbs_sweep(state: ChainState, data: Dataset, prior: PriorSpec,
                settings: SamplerSettings, phase: str, rng,
                workspace: _Workspace | None = None) -> tuple[ChainState, SweepInfo]:
    """One full sweep; returns the new state without touching the old one."""
    if phase not in ("initial", "sampling"):
        raise ValueError("phase must be 'initial' or 'sampling'")
    ws = workspace if workspace is not None else _Workspace(data)
    if ws.eta is None:
        ws.eta = ws.x1 @ state.delta
    c = data.c
    sig_full = np.concatenate(([prior.sigma0_sq], state.sigma2))
    active = active_set(state.sigma2, settings.zeta)

    # step 1: HMC on the active block
    eps_col = compute_stepsizes(_curvature_cols(ws.colsq, sig_full, c), settings.adjust)
    pot = _RestrictedPotential(ws, state.delta, sig_full, active, c)
    ell = settings.ell1 if phase == "initial" else settings.ell2
    out = hmc_update(state.delta, active, ell, eps_col[:, None], pot.value, pot.grad, rng)
    if out.accepted:
        ws.eta = pot.last_eta

    # step 2: feature variances given the new coefficients
    w = math.exp(state.log_w)
    v = _v_rows(out.new_delta[1:], c)
    sigma2 = _draw_sigma2(v, data.k, prior, w, rng)

    # step 3: shared scale
    log_w = state.log_w
    if prior.w_sampled:
        log_w = update_log_w(sigma2, prior, log_w, rng)

    u_end = -_loglik_from_eta(ws.eta, ws.y) + neg_log_prior_delta(out.new_delta, sigma2, prior)
    info = SweepInfo(out.accepted, out.hamiltonian_delta, int(active.size), u_end, out.divergent)
    return ChainState(out.new_delta, sigma2, log_w), info


def run_chain(data: Dataset, prior: PriorSpec, settings: SamplerSettings,
              sink=None) -> ChainRecord:
    """Run the full two-phase chain and collect the thinned draws.

    Parameters
    ----------
    sink : callable, optional
        Called as ``sink(draw_index, sweep, state)`` right after each
        recorded draw, for incremental persistence.

    Raises
    ------
    ChainDivergenceError
        After more than 1000 consecutive rejected coefficient updates.
    """
    rng = np.random.default_rng(settings.seed)
    delta = init_delta(data, prior)
    state = ChainState(delta, init_sigma2(delta, prior), float(prior.log_w))
    ws = _Workspace(data)
    ws.eta = ws.x1 @ state.delta

    total = settings.n1 + settings.n2
    diag = ChainDiagnostics(
        sweep=np.arange(1, total + 1),
        phase=np.zeros(total, dtype=int),
        accepted=np.zeros(total, dtype=bool),
        delta_h=np.empty(total),
        active_size=np.zeros(total, dtype=int),
        u=np.empty(total),
    )
    n_draws = settings.n2 // settings.thin
    delta_draws = np.empty((n_draws, data.p + 1, data.k))
    sigma2_draws = np.empty((n_draws, data.p))
    log_w_draws = np.empty(n_draws)

    rejections = 0
    pos = 0
    draw = 0
    for phase_name, sweeps in (("initial", settings.n1), ("sampling", settings.n2)):
        phase_code = 0 if phase_name == "initial" else 1
        for s in range(1, sweeps + 1):
            state, info = gibbs_sweep(state, data, prior, settings, phase_name, rng, ws)
            diag.phase[pos] = phase_code
            diag.accepted[pos] = info.accepted
            diag.delta_h[pos] = info.delta_h
            diag.active_size[pos] = info.active_size
            diag.u[pos] = info.u
            pos += 1
            rejections = 0 if info.accepted else rejections + 1
            if rejections > MAX_CONSECUTIVE_REJECTIONS:
                raise ChainDivergenceError(
                    f"{rejections} consecutive rejections at sweep {pos}; "
                    "the stepsizes are likely too large for this posterior"
                )
            if phase_code == 1 and s % settings.thin == 0:
                delta_draws[draw] = state.delta
                sigma2_draws[draw] = state.sigma2
                log_w_draws[draw] = state.log_w
                if sink is not None:
                    sink(draw, pos, state)
                draw += 1
    return ChainRecord(delta_draws, sigma2_draws, log_w_draws, diag)
