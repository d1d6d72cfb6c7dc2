"""Delivery loops for the three allocation policies.

`run_dmd` paces with plain dual mirror descent in quality space, `run_rcpacing`
with percentile-space duals plus probabilistic throttling, and
`run_smart_baseline` with layered quality throttling and no duals.

The loops are vectorized per period.  Budget feasibility is still resolved
with sequential semantics: winners are computed optimistically for the whole
period, then campaigns that would overshoot their remaining budget are cut
at the exact request where they exhaust and the period is re-resolved.  A
campaign exhausts at most once per run, so the repair loop is cheap.

Randomness discipline: each run owns one counter-based generator; throttle
draws are consumed one per (request, recalled campaign) edge in (request
order, ascending campaign id) order, independent of any control values, so
configurations differing only in formulas consume identical draws.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .pacing import (CampaignState, PacingHyperParams, PeriodStats, apply_dual_clip,
                     compute_ptr, dual_step, fp, fv, init_base_ptr, init_dual_percentile,
                     init_expected_ptr, psi_speed_bound, update_eptr)
from .quality import (BoxCoxFit, DegenerateSampleError, DomainError,
                      backward_transform_clipped, boxcox, fit_boxcox, forward_transform,
                      normal_cdf)
from .streams import ImpressionRequest, ImpressionStream

_TAG_RUN = 2
_TAG_PRIOR = 4
_ALGO_TAGS = {"dmd": 0, "rcpacing": 1, "smart": 2}

_NEUTRAL_SIGMA = 1.0 / math.sqrt(12.0)  # std of a uniform quality prior under lambda=1


@dataclass
class RunConfig:
    """Engine-level knobs shared by all three policies."""

    params: PacingHyperParams = field(default_factory=PacingHyperParams)
    seed: int = 0
    per_impression: bool = False    # re-chunk the stream into single-request periods
    # period-gradient normalization: "relative" divides the (rho_bar - x_bar)
    # deficit by rho_bar so the step size acts on the fraction of target
    # missed; "absolute" keeps raw per-request units, the convention the
    # sublinear-regret analysis assumes for per-impression runs
    gradient_mode: str = "relative"
    refit_window: int = 2           # periods of logs per transform refit
    min_fit_samples: int = 30
    prior_fit_samples: int = 4096
    smart_layers: int = 10
    log_transforms: bool = False    # capture per-period forward-transform values

    def __post_init__(self):
        if self.gradient_mode not in ("relative", "absolute"):
            raise DomainError(
                f"gradient_mode must be 'relative' or 'absolute', got {self.gradient_mode!r}")


@dataclass(frozen=True)
class AllocationDecision:
    request_id: int
    winner: int | None              # campaign id
    bid: float | None               # winning premium v - alpha
    throttled: frozenset[int]       # campaigns that failed their throttle draw


@dataclass
class DeliveryTrace:
    """Aggregate outcome of one run: per-campaign, per-period bookkeeping."""

    algorithm: str
    campaign_ids: list[int]
    budgets: np.ndarray             # (M,)
    wins: np.ndarray                # (M, T) impressions won
    quality_sum: np.ndarray         # (M, T) summed quality of won impressions
    remaining: np.ndarray           # (M,) final leftover budget
    duals: np.ndarray               # (M, T) dual in effect during each period
    eptr: np.ndarray                # (M, T) emergency pass rate in effect
    stream_id: str
    seed: int
    transforms: list[np.ndarray] | None = None

    @property
    def total_wins(self) -> float:
        return float(self.wins.sum())

    @property
    def total_quality(self) -> float:
        return float(self.quality_sum.sum())

    def tobytes(self) -> bytes:
        parts = [self.algorithm.encode(), self.stream_id.encode(), str(self.seed).encode()]
        for arr in (self.budgets, self.wins, self.quality_sum, self.remaining,
                    self.duals, self.eptr):
            parts.append(np.ascontiguousarray(arr).tobytes())
        return b"|".join(parts)


def _substream(*keys: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(keys))))


def run_seed(scenario_seed: int, algorithm: str, round_index: int = 0) -> int:
    """Stable per-(algorithm, round) seed derivation from a scenario seed."""
    ss = np.random.SeedSequence([scenario_seed, _TAG_RUN, _ALGO_TAGS[algorithm], round_index])
    return int(ss.generate_state(1, np.uint64)[0])


def init_campaign_states(specs, stream: ImpressionStream,
                         params: PacingHyperParams) -> list[CampaignState]:
    """Fresh states in ascending campaign-id order."""
    specs = sorted(specs, key=lambda s: s.id)
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise DomainError("campaign ids must be unique")
    total = stream.total_requests
    T = max(1, stream.n_periods)
    states = []
    for spec in specs:
        budget = float(spec.budget)
        audience = float(spec.recall_prob) * total
        ptr_exp = init_expected_ptr(budget, audience, params.p_ub) if audience > 0 else 1.0
        states.append(CampaignState(
            id=spec.id,
            budget=budget,
            remaining=budget,
            rho=budget / T,
            audience=audience,
            fit=None,
            ptr_exp=ptr_exp,
            ptr_base=init_base_ptr(ptr_exp, params.wr_glb),
            alpha_bar=init_dual_percentile(ptr_exp, params.p_ub),
            alpha=0.0,
            eptr=params.initial_trial_rate,
            exhausted=budget < 1.0,
            period_cost=0.0,
            period_ecost=budget / T,
        ))
    return states


# --- per-request decision operations -----------------------------------------

def dmd_decide(request: ImpressionRequest, states: list[CampaignState],
               eta: float | None = None) -> AllocationDecision:
    """Highest premium v - alpha among non-exhausted recalled campaigns wins;
    no positivity requirement; ties break to the lowest campaign id.  The
    step size is not used by the decision rule and is accepted only so call
    sites mirror the period update."""
    best = None
    best_bid = -np.inf
    for s in sorted(states, key=lambda s: s.id):
        v = request.qualities.get(s.id)
        if v is None or s.exhausted or s.remaining < 1.0:
            continue
        bid = v - s.alpha
        if bid > best_bid:
            best, best_bid = s, bid
    if best is None:
        return AllocationDecision(request.request_id, None, None, frozenset())
    best.remaining -= 1.0
    best.period_cost += 1.0
    if best.remaining < 1.0:
        best.exhausted = True
    return AllocationDecision(request.request_id, best.id, float(best_bid), frozenset())


def rcp_decide(request: ImpressionRequest, states: list[CampaignState],
               params: PacingHyperParams, rng: np.random.Generator) -> AllocationDecision:
    """Throttled premium auction.

    One uniform draw is consumed per recalled campaign in ascending-id order,
    whether or not the campaign is exhausted, keeping draw consumption aligned
    with the vectorized loop.  Winner is the highest strictly positive premium
    among campaigns that passed their draw; ties break to the lowest id.
    """
    throttled: set[int] = set()
    best = None
    best_bid = -np.inf
    for s in sorted(states, key=lambda s: s.id):
        v = request.qualities.get(s.id)
        if v is None:
            continue
        u = float(rng.random())
        if s.exhausted or s.remaining < 1.0:
            continue
        v_bar = forward_transform(s.fit, v)
        if u >= compute_ptr(s, params, v_bar):
            throttled.add(s.id)
            continue
        bid = v - s.alpha
        if bid > 0.0 and bid > best_bid:
            best, best_bid = s, bid
    if best is None:
        return AllocationDecision(request.request_id, None, None, frozenset(throttled))
    best.remaining -= 1.0
    best.period_cost += 1.0
    if best.remaining < 1.0:
        best.exhausted = True
    return AllocationDecision(request.request_id, best.id, float(best_bid), frozenset(throttled))


# --- per-period dual updates --------------------------------------------------

def dmd_period_update(states: list[CampaignState], period_stats: PeriodStats,
                      eta: float, gradient_mode: str = "relative") -> None:
    """alpha <- max{0, alpha - eta * g} with g the per-request deficit
    rho_bar - x_bar, divided by rho_bar in relative mode."""
    n = max(1, period_stats.n_requests)
    for i, s in enumerate(states):
        if s.period_ecost <= 0.0:
            continue
        x_bar = float(period_stats.cost[i]) / n
        rho_bar = s.rho / period_stats.avg_requests
        g = rho_bar - x_bar
        if gradient_mode == "relative":
            g /= rho_bar
        s.alpha = max(0.0, s.alpha - eta * g)
        s.period_cost = 0.0


def rcp_period_update(states: list[CampaignState], period_stats: PeriodStats,
                      params: PacingHyperParams, gradient_mode: str = "relative",
                      period_scale: bool = True) -> None:
    """Divergence step on the percentile dual, clipped, mapped back to quality
    space, followed by the emergency-rate update.  Campaigns with a zero
    per-period target are left untouched.

    `period_scale=False` (single-request periods) freezes the emergency rate
    and the speed-based clip bound: both act on the cost/expected-cost ratio,
    which degenerates to {0, 1/rho} when a period holds one request."""
    M = len(states)
    a = np.array([s.alpha_bar for s in states])
    base = np.array([s.ptr_base for s in states])
    eptr = np.array([s.eptr for s in states])
    rho = np.array([s.rho for s in states])
    ecost = np.array([s.period_ecost for s in states])
    cost = np.asarray(period_stats.cost, dtype=float)

    active = ecost > 0.0
    n = max(1, period_stats.n_requests)
    x_bar = cost / n
    rho_bar = rho / period_stats.avg_requests
    g = rho_bar - x_bar
    if gradient_mode == "relative":
        g = np.where(rho_bar > 0.0, g / np.where(rho_bar > 0.0, rho_bar, 1.0), 0.0)
    a_tilde = dual_step(a, g, params)
    spd = np.where(active, cost / np.where(active, ecost, 1.0), 1.0)

    if params.clip_enabled:
        adaptive = params.adaptive_clip_enabled and period_scale
        bound = psi_speed_bound(a, base, spd, params) if adaptive else None
        a_new = apply_dual_clip(a, a_tilde, g, params.alpha_hat, bound)
    else:
        a_new = np.clip(np.asarray(a_tilde, dtype=float), 0.0, 1.0)
    e_new = update_eptr(eptr, spd, params.eptr_speed_cap) if period_scale else eptr

    a_new = np.atleast_1d(a_new)
    e_new = np.atleast_1d(e_new)
    for i, s in enumerate(states):
        if not active[i]:
            continue
        s.alpha_bar = float(a_new[i])
        if s.fit is not None:
            s.alpha = float(backward_transform_clipped(s.fit, s.alpha_bar))
        s.eptr = float(e_new[i])
        s.period_cost = 0.0


# --- vectorized run loops ------------------------------------------------------

@dataclass
class _DensePeriod:
    n_requests: int
    req: np.ndarray
    camp: np.ndarray            # dense campaign index into the states list
    v: np.ndarray
    starts: np.ndarray          # first edge per request present in this period
    seg_idx: np.ndarray         # per-edge segment index


def _densify(stream: ImpressionStream, spec_ids: list[int]) -> list[_DensePeriod]:
    id_arr = np.asarray(spec_ids, dtype=np.int64)
    out = []
    for p in stream.periods:
        if p.n_edges:
            pos = np.searchsorted(id_arr, p.camp)
            pos = np.clip(pos, 0, id_arr.size - 1)
            keep = id_arr[pos] == p.camp
            req = p.req[keep]
            camp = pos[keep].astype(np.int64)
            v = p.v[keep]
        else:
            req = np.empty(0, dtype=np.int64)
            camp = np.empty(0, dtype=np.int64)
            v = np.empty(0, dtype=np.float64)
        present, starts = np.unique(req, return_index=True)
        seg_idx = np.searchsorted(present, req)
        out.append(_DensePeriod(p.n_requests, req, camp, v, starts, seg_idx))
    return out


def _resolve_winners(dp: _DensePeriod, score: np.ndarray, elig: np.ndarray,
                     remaining: np.ndarray) -> np.ndarray:
    """Edge indices of period winners under sequential budget semantics.

    Winners are recomputed with a campaign cut at the request where it runs
    out whenever the optimistic pass over-allocates someone; only the
    earliest violation is applied per iteration so the prefix before it is
    already sequentially correct.
    """
    n_camp = remaining.size
    cut = np.full(n_camp, dp.n_requests, dtype=np.int64)
    if dp.req.size == 0:
        return np.empty(0, dtype=np.int64)
    while True:
        ok = elig & (dp.req < cut[dp.camp])
        s = np.where(ok, score, -np.inf)
        seg_max = np.maximum.reduceat(s, dp.starts)
        cand = ok & (s == seg_max[dp.seg_idx])
        cand_edges = np.flatnonzero(cand)
        _, first = np.unique(dp.req[cand_edges], return_index=True)
        winner_edges = cand_edges[first]
        counts = np.bincount(dp.camp[winner_edges], minlength=n_camp)
        over = np.flatnonzero(counts > remaining)
        if over.size == 0:
            return winner_edges
        best_j = -1
        best_pos = None
        wcamp = dp.camp[winner_edges]
        wreq = dp.req[winner_edges]
        for j in over:
            pos = wreq[wcamp == j][int(remaining[j])]   # first unaffordable win
            if best_pos is None or pos < best_pos:
                best_pos, best_j = pos, j
        cut[best_j] = best_pos


def _apply_wins(dp: _DensePeriod, winner_edges: np.ndarray, states, M: int):
    cost = np.bincount(dp.camp[winner_edges], minlength=M).astype(float)
    qual = np.bincount(dp.camp[winner_edges], weights=dp.v[winner_edges], minlength=M)
    for i, s in enumerate(states):
        if cost[i]:
            s.remaining -= cost[i]
            s.period_cost = cost[i]
            if s.remaining < 1.0:
                s.exhausted = True
        else:
            s.period_cost = 0.0
    return cost, qual


def _boxcox_edges(lam: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Box-Cox with a per-edge lambda."""
    log_branch = np.abs(lam) < 1e-9
    safe_lam = np.where(log_branch, 1.0, lam)
    return np.where(log_branch, np.log(v), (np.power(v, safe_lam) - 1.0) / safe_lam)


def _new_trace(algorithm: str, states, stream: ImpressionStream, T: int,
               seed: int, capture: bool) -> DeliveryTrace:
    M = len(states)
    return DeliveryTrace(
        algorithm=algorithm,
        campaign_ids=[s.id for s in states],
        budgets=np.array([s.budget for s in states]),
        wins=np.zeros((M, T), dtype=np.int64),
        quality_sum=np.zeros((M, T)),
        remaining=np.zeros(M),
        duals=np.zeros((M, T)),
        eptr=np.ones((M, T)),
        stream_id=stream.fingerprint(),
        seed=seed,
        transforms=[] if capture else None,
    )


def run_dmd(stream: ImpressionStream, specs, config: RunConfig) -> DeliveryTrace:
    if config.per_impression:
        stream = stream.per_impression()
    states = init_campaign_states(specs, stream, config.params)
    for s in states:
        s.alpha = 0.0
        s.eptr = 1.0
    M = len(states)
    periods = _densify(stream, [s.id for s in states])
    T = len(periods)
    trace = _new_trace("dmd", states, stream, T, config.seed, False)
    avg_req = stream.avg_requests_per_period

    for t, dp in enumerate(periods):
        alpha = np.array([s.alpha for s in states])
        live = np.array([not s.exhausted for s in states])
        remaining = np.array([int(s.remaining) for s in states], dtype=np.int64)
        bid = dp.v - alpha[dp.camp]
        elig = live[dp.camp]
        winner_edges = _resolve_winners(dp, bid, elig, remaining)
        cost, qual = _apply_wins(dp, winner_edges, states, M)
        trace.wins[:, t] = cost
        trace.quality_sum[:, t] = qual
        trace.duals[:, t] = alpha
        stats = PeriodStats(cost=cost, n_requests=dp.n_requests, avg_requests=avg_req)
        dmd_period_update(states, stats, config.params.eta, config.gradient_mode)

    trace.remaining = np.array([s.remaining for s in states])
    return trace


class _FitManager:
    """Rolling-window Box-Cox fits with prior fallback.

    Per refit, a campaign uses its own logged qualities from the last
    `refit_window` periods when there are at least `min_fit_samples` of them,
    else the pooled logs of all campaigns over the same window, else a fit
    sampled once from the campaign's generating quality model.  Degenerate
    samples fall through the same chain; the last resort is a fixed neutral
    fit (lambda=1 around a uniform quality prior).
    """

    def __init__(self, specs, config: RunConfig):
        self.specs = specs
        self.config = config
        self.eps = config.params.epsilon
        self.window: deque[list[np.ndarray]] = deque(maxlen=config.refit_window)
        self._prior: dict[int, BoxCoxFit] = {}
        self._neutral = BoxCoxFit(1.0, -0.5, _NEUTRAL_SIGMA, self.eps)
        self._global_fit: BoxCoxFit | None = None

    def log_period(self, camp: np.ndarray, v: np.ndarray, M: int) -> None:
        order = np.argsort(camp, kind="stable")
        counts = np.bincount(camp, minlength=M)
        self.window.append(np.split(v[order], np.cumsum(counts)[:-1]))

    def _prior_fit(self, i: int) -> BoxCoxFit:
        if i not in self._prior:
            model = getattr(self.specs[i], "quality_model", None)
            if model is None:
                self._prior[i] = self._neutral
            else:
                rng = _substream(self.config.seed, _TAG_PRIOR, i)
                samples = rng.beta(model.m, model.n, size=self.config.prior_fit_samples)
                self._prior[i] = self._try_fit(samples) or self._neutral
        return self._prior[i]

    def _try_fit(self, samples: np.ndarray) -> BoxCoxFit | None:
        try:
            return fit_boxcox(samples, self.eps)
        except (DegenerateSampleError, DomainError):
            return None

    def assign_fits(self, states: list[CampaignState]) -> None:
        min_n = self.config.min_fit_samples
        own = None
        if self.window:
            own = [np.concatenate([period[i] for period in self.window])
                   for i in range(len(states))]
        self._global_fit = None
        pooled = np.concatenate([np.concatenate(p) for p in self.window]) if self.window else np.empty(0)

        for i, s in enumerate(states):
            fit = None
            if own is not None and own[i].size >= min_n:
                fit = self._try_fit(own[i])
            if fit is None and pooled.size >= min_n:
                if self._global_fit is None:
                    self._global_fit = self._try_fit(pooled) or self._prior_fit(i)
                fit = self._global_fit
            if fit is None:
                fit = self._prior_fit(i)
            s.fit = fit


def run_rcpacing(stream: ImpressionStream, specs, config: RunConfig) -> DeliveryTrace:
    if config.per_impression:
        stream = stream.per_impression()
    states = init_campaign_states(specs, stream, config.params)
    params = config.params
    M = len(states)
    periods = _densify(stream, [s.id for s in states])
    T = len(periods)
    trace = _new_trace("rcpacing", states, stream, T, config.seed, config.log_transforms)
    avg_req = stream.avg_requests_per_period
    fitman = _FitManager(states_specs := sorted(specs, key=lambda s: s.id), config)
    rng = _substream(config.seed, _TAG_RUN, _ALGO_TAGS["rcpacing"])

    for t, dp in enumerate(periods):
        fitman.assign_fits(states)
        for s in states:
            s.alpha = float(backward_transform_clipped(s.fit, s.alpha_bar))

        alpha_bar = np.array([s.alpha_bar for s in states])
        alpha = np.array([s.alpha for s in states])
        ptr_base = np.array([s.ptr_base for s in states])
        eptr = np.array([s.eptr for s in states])
        live = np.array([not s.exhausted for s in states])
        remaining = np.array([int(s.remaining) for s in states], dtype=np.int64)
        lam = np.array([s.fit.lambda_star for s in states])
        mu = np.array([s.fit.mu for s in states])
        scale = np.array([s.fit.scale for s in states])
        fp_c = np.atleast_1d(fp(alpha_bar, params.p_ub))

        c = dp.camp
        v_bar = normal_cdf((_boxcox_edges(lam[c], dp.v) - mu[c]) / scale[c])
        raw = ptr_base[c] * fp_c[c] * fv(alpha_bar[c], v_bar, params.slope_k)
        ptr = np.minimum(1.0, raw) * eptr[c]
        u = rng.random(dp.v.size)
        passed = u < ptr

        bid = dp.v - alpha[c]
        elig = passed & live[c] & (bid > 0.0)
        winner_edges = _resolve_winners(dp, bid, elig, remaining)
        cost, qual = _apply_wins(dp, winner_edges, states, M)

        trace.wins[:, t] = cost
        trace.quality_sum[:, t] = qual
        trace.duals[:, t] = alpha_bar
        trace.eptr[:, t] = eptr
        if trace.transforms is not None:
            trace.transforms.append(v_bar.copy())

        fitman.log_period(c, dp.v, M)
        stats = PeriodStats(cost=cost, n_requests=dp.n_requests, avg_requests=avg_req)
        rcp_period_update(states, stats, params, config.gradient_mode,
                          period_scale=not config.per_impression)

    trace.remaining = np.array([s.remaining for s in states])
    return trace


def run_smart_baseline(stream: ImpressionStream, specs, config: RunConfig) -> DeliveryTrace:
    """Layered throttling baseline: L equal-width quality layers per campaign,
    multiplicative per-period feedback that opens high-quality layers first
    when underspending and closes low-quality layers first when overspending.
    Winner among throttle-passers is the highest raw quality."""
    if config.per_impression:
        stream = stream.per_impression()
    states = init_campaign_states(specs, stream, config.params)
    M = len(states)
    L = config.smart_layers
    periods = _densify(stream, [s.id for s in states])
    T = len(periods)
    trace = _new_trace("smart", states, stream, T, config.seed, False)
    avg_req = stream.avg_requests_per_period
    rng = _substream(config.seed, _TAG_RUN, _ALGO_TAGS["smart"])

    layer_ptr = np.empty((M, L))
    for i, s in enumerate(states):
        init = min(1.0, s.budget / (s.audience * config.params.wr_glb)) if s.audience > 0 else 1.0
        layer_ptr[i, :] = init
    ptr_floor = 0.01

    for t, dp in enumerate(periods):
        live = np.array([not s.exhausted for s in states])
        remaining = np.array([int(s.remaining) for s in states], dtype=np.int64)
        layer = np.minimum((dp.v * L).astype(np.int64), L - 1)
        ptr = layer_ptr[dp.camp, layer]
        u = rng.random(dp.v.size)
        elig = (u < ptr) & live[dp.camp]
        winner_edges = _resolve_winners(dp, dp.v, elig, remaining)
        cost, qual = _apply_wins(dp, winner_edges, states, M)
        trace.wins[:, t] = cost
        trace.quality_sum[:, t] = qual

        for i, s in enumerate(states):
            if s.rho <= 0.0 or s.exhausted:
                continue
            spd = cost[i] / s.rho
            if spd < 1.0:
                boost = 2.0 if spd <= 0.0 else min(2.0, 1.0 / spd)
                for l in range(L - 1, -1, -1):
                    if layer_ptr[i, l] < 1.0:
                        layer_ptr[i, l] = min(1.0, layer_ptr[i, l] * boost)
                        break
            elif spd > 1.0:
                shrink = max(0.5, 1.0 / spd)
                for l in range(L):
                    if layer_ptr[i, l] > ptr_floor:
                        layer_ptr[i, l] = max(ptr_floor, layer_ptr[i, l] * shrink)
                        break
            s.period_cost = 0.0

    trace.remaining = np.array([s.remaining for s in states])
    return trace


RUNNERS = {
    "dmd": run_dmd,
    "rcpacing": run_rcpacing,
    "smart": run_smart_baseline,
}
