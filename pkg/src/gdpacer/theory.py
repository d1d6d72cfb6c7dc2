"""Numeric property checks behind the `validate` command.

Each check turns one of the distributional claims the pacing design leans on
into a quadrature computation over a grid, so a regression in the transform
or threshold machinery shows up as a named failing grid point rather than a
silent drift.  Beta CDFs are computed with an in-house composite
Gauss-Legendre rule (the checks should not share code with what they audit).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import lgamma

import numpy as np

from .quality import (
    BoxCoxFit,
    backward_transform,
    boxcox,
    forward_transform,
    normal_cdf,
    normal_quantile,
)

QUAD_TOL = 1e-8
SHAPE_GRID = ((2.0, 2.0), (3.0, 2.0), (2.0, 5.0))
ALPHA_GRID = np.linspace(0.1, 0.9, 9)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


def beta_pdf(m: float, n: float, x):
    x = np.asarray(x, dtype=float)
    c = lgamma(m + n) - lgamma(m) - lgamma(n)
    with np.errstate(divide="ignore"):
        logp = np.where(
            (x > 0) & (x < 1),
            (m - 1) * np.log(np.clip(x, 1e-300, None))
            + (n - 1) * np.log(np.clip(1 - x, 1e-300, None)) + c,
            -np.inf,
        )
    return np.exp(logp)


def beta_cdf(m: float, n: float, x: float, panels: int = 32) -> float:
    """P(V <= x) for V ~ Beta(m, n) by composite 24-point Gauss-Legendre.

    Shapes >= 1 keep the density bounded, so the rule converges well past
    the 1e-8 tolerance the validation suite asserts.
    """
    x = float(x)
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    edges = np.linspace(0.0, x, panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    vals = beta_pdf(m, n, pts)
    return float(np.sum(half[:, None] * _GL_WEIGHTS[None, :] * vals))


def participation_rate(m: float, n: float, alpha: float) -> float:
    """Probability a quality draw clears the threshold alpha."""
    return 1.0 - beta_cdf(m, n, alpha)


def fluctuation_ratio(m: float, n: float, alpha: float, delta: float = 0.05) -> float:
    """How much the participation rate grows when the threshold drops by
    delta; its monotone growth in alpha is what makes high thresholds
    twitchy."""
    return participation_rate(m, n, alpha - delta) / participation_rate(m, n, alpha)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _check_survival_ratio_monotone(delta: float = 0.05) -> CheckResult:
    name = "survival-ratio-monotonicity"
    for m, n in SHAPE_GRID:
        vals = np.array([fluctuation_ratio(m, n, a, delta) for a in ALPHA_GRID])
        diffs = np.diff(vals)
        bad = np.nonzero(diffs < -QUAD_TOL)[0]
        if bad.size:
            i = int(bad[0])
            return CheckResult(name, False,
                               f"ratio decreases at (m={m}, n={n}, "
                               f"alpha={ALPHA_GRID[i + 1]:.2f}): "
                               f"{vals[i]:.10f} -> {vals[i + 1]:.10f}")
    return CheckResult(name, True,
                       f"non-decreasing over alpha grid for {len(SHAPE_GRID)} shape pairs")


def _check_participation_shape_monotone(delta: float = 0.5) -> CheckResult:
    name = "participation-shape-monotonicity"
    for m, n in SHAPE_GRID:
        for a in ALPHA_GRID:
            base = participation_rate(m, n, a)
            up_m = participation_rate(m + delta, n, a)
            up_n = participation_rate(m, n + delta, a)
            if up_m - base < QUAD_TOL:
                return CheckResult(name, False,
                                   f"not increasing in m at (m={m}, n={n}, alpha={a:.2f}): "
                                   f"{base:.10f} -> {up_m:.10f}")
            if base - up_n < QUAD_TOL:
                return CheckResult(name, False,
                                   f"not decreasing in n at (m={m}, n={n}, alpha={a:.2f}): "
                                   f"{base:.10f} -> {up_n:.10f}")
    return CheckResult(name, True, "rate rises with m and falls with n at every grid point")


def _check_drift_ratio_monotone(delta: float = 0.5) -> CheckResult:
    name = "drift-ratio-monotonicity"
    for m, n in SHAPE_GRID:
        vals = np.array([
            participation_rate(m + delta, n, a) / participation_rate(m, n, a)
            for a in ALPHA_GRID
        ])
        diffs = np.diff(vals)
        bad = np.nonzero(diffs < -QUAD_TOL)[0]
        if bad.size:
            i = int(bad[0])
            return CheckResult(name, False,
                               f"ratio decreases at (m={m}, n={n}, "
                               f"alpha={ALPHA_GRID[i + 1]:.2f}): "
                               f"{vals[i]:.10f} -> {vals[i + 1]:.10f}")
    return CheckResult(name, True, "shape-shift ratio non-decreasing in alpha")


def _check_percentile_linear_bound(grid_points: int = 1000) -> CheckResult:
    """CDF(alpha) <= K1 * alpha with a finite K1 attained strictly inside
    (0, 1); verified on an offset grid finer than the one K1 came from."""
    name = "percentile-linear-bound"
    for m, n in SHAPE_GRID:
        grid = np.linspace(1.0 / grid_points, 1.0, grid_points)
        cdf = np.array([beta_cdf(m, n, a) for a in grid])
        ratio = cdf / grid
        k1 = float(ratio.max())
        arg = int(ratio.argmax())
        if not np.isfinite(k1):
            return CheckResult(name, False, f"K1 diverges for (m={m}, n={n})")
        if arg in (0, grid_points - 1):
            return CheckResult(name, False,
                               f"K1 attained at the boundary alpha={grid[arg]:.4f} "
                               f"for (m={m}, n={n})")
        probe = np.linspace(0.0007, 0.9993, 1000)
        cdf_p = np.array([beta_cdf(m, n, a) for a in probe])
        slack = cdf_p - k1 * (1.0 + 1e-6) * probe
        if (slack > QUAD_TOL).any():
            i = int(np.argmax(slack))
            return CheckResult(name, False,
                               f"bound violated at (m={m}, n={n}, alpha={probe[i]:.4f}): "
                               f"CDF={cdf_p[i]:.10f} > K1*alpha={k1 * probe[i]:.10f}")
    return CheckResult(name, True, "finite interior K1 bounds the percentile map")


def _check_transform_round_trip() -> CheckResult:
    name = "transform-round-trip"
    vgrid = np.linspace(0.01, 0.99, 99)
    for lam in (-1.0, 0.0, 0.5, 1.0):
        y = boxcox(lam, vgrid)
        mu = float((y.max() + y.min()) / 2.0)
        sigma = float((y.max() - y.min()) / 6.0)
        for eps in (0.0, 0.1, 1.0):
            fit = BoxCoxFit(lambda_star=lam, mu=mu, sigma=sigma, epsilon=eps)
            back = np.array([backward_transform(fit, forward_transform(fit, v))
                             for v in vgrid])
            err = np.abs(back - vgrid)
            if err.max() > 1e-6:
                i = int(err.argmax())
                return CheckResult(name, False,
                                   f"round-trip error {err[i]:.3e} at "
                                   f"(lambda={lam}, eps={eps}, v={vgrid[i]:.2f})")
    return CheckResult(name, True, "percentile round trip exact to 1e-6 on all grids")


def _check_normal_inverse() -> CheckResult:
    name = "normal-inverse-consistency"
    xs = np.linspace(-6.0, 6.0, 241)
    for x in xs:
        p = normal_cdf(x)
        if not 0.0 < p < 1.0:
            continue
        err = abs(normal_quantile(p) - x)
        if err > 1e-6:
            return CheckResult(name, False,
                               f"quantile(cdf(x)) off by {err:.3e} at x={x:.3f}")
    spot = abs(normal_cdf(1.959964) - 0.975)
    if spot > 1e-6:
        return CheckResult(name, False,
                           f"cdf(1.959964) misses 0.975 by {spot:.3e}")
    return CheckResult(name, True, "quantile inverts cdf to 1e-6 over |x| <= 6")


def run_validation_suite(narrow: bool = False) -> list[CheckResult]:
    """All distribution and transform checks; `narrow` trims the expensive
    grid-sweep checks for a quick smoke pass."""
    checks = [
        _check_survival_ratio_monotone(),
        _check_participation_shape_monotone(),
        _check_drift_ratio_monotone(),
    ]
    if not narrow:
        checks.append(_check_percentile_linear_bound())
        checks.append(_check_transform_round_trip())
    checks.append(_check_normal_inverse())
    return checks
