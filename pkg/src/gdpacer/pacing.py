"""Per-campaign pacing state and control formulas.

Covers the probabilistic-throttling machinery (expected/base pass-through
rates, percentile-gap factors, emergency trial rate), the mirror-descent
dual steps in percentile space, and static/adaptive gradient clipping via
the expected-participation function psi.

Formula functions broadcast over numpy arrays so the delivery engine can
apply them to whole campaign vectors; scalars map to scalars.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quality import BoxCoxFit, DomainError

# Percentile-gap pass factor endpoints: fp(0) = 50 at full underspend
# pressure, fp(1) = 0.2 at full overspend pressure, fp(p_ub) = 1.
FP_GAIN = 50.0
FP_DECAY = 0.2

SPEED_FLOOR = 1e-3

_DIVERGENCES = ("euclidean", "itakura")


class ZeroTargetError(ValueError):
    """Spending speed requested for a campaign with no per-period target."""


@dataclass
class PacingHyperParams:
    """Controller knobs; defaults follow the reference configuration."""

    epsilon: float = 0.1          # transform skew factor
    eta: float = 0.2              # dual step size
    alpha_hat: float = 0.05       # static clip radius in percentile space
    p_ub: float = 0.9             # upper-bound percentile anchor
    wr_glb: float = 0.15          # assumed global win rate
    slope_k: float = 10.0         # quality-gap slope in the fv factor
    divergence: str = "itakura"
    clip_enabled: bool = True     # master switch for the per-period dual clip
    adaptive_clip_enabled: bool = True
    eptr_speed_cap: float = 2.0
    initial_trial_rate: float = 0.1

    def __post_init__(self):
        if self.divergence not in _DIVERGENCES:
            raise DomainError(f"divergence must be one of {_DIVERGENCES}, got {self.divergence!r}")
        if not 0.0 < self.p_ub < 1.0:
            raise DomainError(f"p_ub must lie in (0, 1), got {self.p_ub}")
        if self.epsilon < 0.0 or self.eta <= 0.0 or self.alpha_hat <= 0.0:
            raise DomainError("epsilon must be >= 0; eta and alpha_hat must be > 0")
        if self.wr_glb <= 0.0 or self.slope_k < 0.0:
            raise DomainError("wr_glb must be > 0 and slope_k >= 0")
        if self.eptr_speed_cap <= 1.0 or not 0.0 < self.initial_trial_rate <= 1.0:
            raise DomainError("eptr_speed_cap must exceed 1 and initial_trial_rate lie in (0, 1]")


@dataclass
class CampaignState:
    """Mutable per-campaign delivery and control state."""

    id: int
    budget: float
    remaining: float
    rho: float                      # per-period impression target = budget / periods
    audience: float                 # expected recalled requests over the horizon
    fit: BoxCoxFit | None
    ptr_exp: float
    ptr_base: float
    alpha_bar: float                # dual in percentile space
    alpha: float                    # dual in quality space
    eptr: float
    exhausted: bool = False
    period_cost: float = 0.0
    period_ecost: float = 0.0       # per-period expected cost; equals rho


@dataclass
class PeriodStats:
    """One period's realized spend, aligned with the campaign-state order."""

    cost: np.ndarray
    n_requests: int
    avg_requests: float             # horizon-average requests per period


def init_expected_ptr(budget: float, audience: float, p_ub: float) -> float:
    """Pass rate needed to spend the budget using only the top (1-p_ub) slice
    of the campaign's recalled traffic."""
    if budget <= 0.0 or audience <= 0.0:
        raise DomainError("budget and audience must be positive")
    return budget / ((1.0 - p_ub) * audience)


def init_dual_percentile(ptr_exp: float, p_ub: float) -> float:
    """Initial percentile dual: anchor at p_ub while the top slice suffices,
    slide down proportionally once the campaign needs more traffic."""
    if ptr_exp <= 0.0:
        raise DomainError("ptr_exp must be positive")
    a0 = p_ub if ptr_exp <= 1.0 else 1.0 - (1.0 - p_ub) * ptr_exp
    return float(min(1.0, max(0.0, a0)))


def init_base_ptr(ptr_exp: float, wr_glb: float) -> float:
    """Base pass rate after discounting by the assumed global win rate."""
    if wr_glb <= 0.0:
        raise DomainError("wr_glb must be positive")
    return float(min(1.0, ptr_exp / wr_glb))


def fp(alpha_bar, p_ub: float, gain: float = FP_GAIN, decay: float = FP_DECAY):
    """Percentile-gap pass factor: boosts campaigns whose dual sits below the
    anchor p_ub and suppresses those above it; continuous, equal to 1 at p_ub."""
    a = np.asarray(alpha_bar, dtype=float)
    below = np.power(gain, (p_ub - a) / p_ub)
    above = np.power(decay, (p_ub - a) / (p_ub - 1.0))
    out = np.where(a <= p_ub, below, above)
    return out if out.ndim else float(out)


def fv(alpha_bar, v_bar, slope_k: float):
    """Quality-gap pass factor k*(v_bar - alpha_bar) + 1, floored at 0."""
    out = np.maximum(0.0, slope_k * (np.asarray(v_bar, dtype=float) - np.asarray(alpha_bar, dtype=float)) + 1.0)
    return out if out.ndim else float(out)


def compute_ptr(state: CampaignState, params: PacingHyperParams, v_bar: float) -> float:
    """Pass-through rate for one request: min{1, base * fp * fv} * ePTR."""
    raw = state.ptr_base * fp(state.alpha_bar, params.p_ub) * fv(state.alpha_bar, v_bar, params.slope_k)
    return float(min(1.0, raw) * state.eptr)


def spending_speed(period_cost: float, period_ecost: float) -> float:
    """Realized over expected spend for the period."""
    if period_ecost <= 0.0:
        raise ZeroTargetError("period_ecost must be positive (zero-budget campaign)")
    return period_cost / period_ecost


def update_eptr(eptr, spd, cap: float = 2.0):
    """Emergency pass rate update: eptr * min{cap, cap/spd}, capped at 1.

    spd = 0 maps to the full boost factor cap; growth per call never exceeds
    cap and the result stays in (0, 1] for eptr in (0, 1].
    """
    s = np.asarray(spd, dtype=float)
    e = np.asarray(eptr, dtype=float)
    # speeds below cap/MAX_FLOAT would overflow the division; any s <= 1e-12
    # already takes the capped branch, so the floor never alters the result
    s_safe = np.maximum(np.where(s <= 0.0, 1.0, s), 1e-12)
    factor = np.where(s <= 0.0, cap, np.minimum(cap, cap / s_safe))
    out = np.minimum(1.0, e * factor)
    return out if out.ndim else float(out)


def dual_step_euclidean(alpha_bar, g_tilde, eta: float):
    """Unclipped gradient step alpha_bar - eta * g_tilde, clamped to [0, 1]."""
    out = np.clip(np.asarray(alpha_bar, dtype=float) - eta * np.asarray(g_tilde, dtype=float), 0.0, 1.0)
    return out if out.ndim else float(out)


def dual_step_itakura(alpha_bar, g_tilde, eta: float):
    """Mirror step under the barrier reference h(a) = -ln(1.5 - a).

    Valid while eta * g_tilde * (1.5 - alpha_bar) < 1; where the product
    reaches 1 the gradient is rescaled so the product equals 0.5, which keeps
    the step finite and direction-preserving.  Result clamped to [0, 1].
    """
    a = np.asarray(alpha_bar, dtype=float)
    g = np.asarray(g_tilde, dtype=float)
    w = 1.5 - a
    prod = eta * g * w
    bad = prod >= 1.0
    scale = np.where(bad, 0.5 / np.where(bad, prod, 1.0), 1.0)
    g_eff = g * scale
    step = (w * w / (1.0 - eta * g_eff * w)) * eta * g_eff
    out = np.clip(a - step, 0.0, 1.0)
    return out if out.ndim else float(out)


def dual_step(alpha_bar, g_tilde, params: PacingHyperParams):
    if params.divergence == "euclidean":
        return dual_step_euclidean(alpha_bar, g_tilde, params.eta)
    return dual_step_itakura(alpha_bar, g_tilde, params.eta)


def psi(alpha_bar, ptr_base, params: PacingHyperParams):
    """Expected participation at dual alpha_bar over a uniform percentile.

    psi(a) = integral over x in (a, 1] of min{1, ptr_base * fp(a) * fv(a, x)},
    i.e. throttle pass probability times the participation indicator x > a,
    with the emergency rate excluded.  Closed form: the integrand is linear
    in x with slope ptr_base*fp*k until it saturates at 1.
    """
    a = np.asarray(alpha_bar, dtype=float)
    base = np.asarray(ptr_base, dtype=float)
    k = float(params.slope_k)
    c = base * fp(a, params.p_ub)          # integrand value at x = a
    span = 1.0 - a
    slope = c * k
    full = c * span + 0.5 * slope * span * span
    # distance from a to the saturation point of the integrand
    d = np.where(slope > 0.0, (1.0 - c) / np.where(slope > 0.0, slope, 1.0), np.inf)
    d_safe = np.where(np.isfinite(d), d, 0.0)   # branch below only used when d < span
    capped = c * d_safe + 0.5 * slope * d_safe * d_safe + (span - d_safe)
    out = np.where(c >= 1.0, span, np.where(d >= span, full, capped))
    out = np.maximum(out, 0.0)
    return out if out.ndim else float(out)


def psi_inverse(target, ptr_base, params: PacingHyperParams, max_iter: int = 60):
    """Inverse of psi in its first argument, by bisection on [0, 1].

    psi is strictly decreasing for ptr_base > 0, so the root is unique and
    the default iteration budget leaves |psi(result) - target| well under
    1e-8.  Targets at or above psi(0) map to 0; targets at or below 0 map
    to 1.
    """
    t = np.asarray(target, dtype=float)
    base = np.asarray(ptr_base, dtype=float)
    t_b, base_b = np.broadcast_arrays(t, base)
    t_b = t_b.astype(float)
    lo = np.zeros(t_b.shape)
    hi = np.ones(t_b.shape)
    # the full iteration budget shrinks the bracket to ~1e-18; exiting early
    # on |psi - target| would have to return the midpoint that met it, not
    # the bracket center
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        go_right = psi(mid, base_b, params) > t_b
        lo = np.where(go_right, mid, lo)
        hi = np.where(go_right, hi, mid)
    out = 0.5 * (lo + hi)
    top = psi(np.zeros(t_b.shape), base_b, params)
    out = np.where(t_b >= top, 0.0, np.where(t_b <= 0.0, 1.0, out))
    return out if out.ndim else float(out)


def psi_speed_bound(alpha_bar, ptr_base, spd, params: PacingHyperParams):
    """Dual value whose expected participation equals psi(alpha_bar)/spd.

    Scales next-period participation by the realized spending speed: an
    underspending campaign (spd < 1) gets a bound below alpha_bar, an
    overspending one (spd > 1) a bound above it.  spd is floored at 1e-3.
    """
    s = np.maximum(np.asarray(spd, dtype=float), SPEED_FLOOR)
    return psi_inverse(psi(alpha_bar, ptr_base, params) / s, ptr_base, params)


def apply_dual_clip(alpha_bar, alpha_tilde, g_tilde, alpha_hat: float, psi_bound=None):
    """Clip a proposed dual step around alpha_bar.

    For g_tilde >= 0 (step moves down) the result is max{alpha_tilde,
    alpha_bar - alpha_hat, psi_bound}; for g_tilde < 0 the min-side mirror.
    With psi_bound None this is the pure static clip.  Result in [0, 1].
    """
    a = np.asarray(alpha_bar, dtype=float)
    at = np.asarray(alpha_tilde, dtype=float)
    g = np.asarray(g_tilde, dtype=float)
    down = np.maximum(at, a - alpha_hat)
    up = np.minimum(at, a + alpha_hat)
    if psi_bound is not None:
        pb = np.asarray(psi_bound, dtype=float)
        down = np.maximum(down, pb)
        up = np.minimum(up, pb)
    out = np.clip(np.where(g >= 0.0, down, up), 0.0, 1.0)
    return out if out.ndim else float(out)


def clip_dual(state: CampaignState, alpha_tilde_next: float, g_tilde: float,
              spd: float, params: PacingHyperParams) -> float:
    """Static clip of the divergence step, tightened by the participation
    bound when adaptive clipping is enabled."""
    bound = None
    if params.adaptive_clip_enabled:
        bound = psi_speed_bound(state.alpha_bar, state.ptr_base, spd, params)
    return float(apply_dual_clip(state.alpha_bar, alpha_tilde_next, g_tilde,
                                 params.alpha_hat, bound))
