"""Quality-law and percentile-transform tests.

Derived expectations are frozen from independent oracles computed here:
dense-grid likelihood scans for the lambda search, scipy's erf/ndtr pair
and direct density quadrature for the normal helpers, and beta-moment
quadrature for the sampling checks.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special, stats

from gdpacer.quality import (BetaQualityModel, BoxCoxFit, DegenerateSampleError,
                             DomainError, backward_transform,
                             backward_transform_clipped, boxcox, fit_boxcox,
                             fit_boxcox_lambda, fit_moments, forward_transform,
                             inverse_boxcox, normal_cdf, normal_quantile,
                             sample_quality)

RT_LAMBDAS = (-1.0, 0.0, 0.5, 1.0)
RT_EPSILONS = (0.0, 0.1, 1.0)


def _fit_covering(lam: float, eps: float, lo: float = 0.01, hi: float = 0.99) -> BoxCoxFit:
    """Fit whose forward image of [lo, hi] stays inside the percentile clamp."""
    y = boxcox(lam, np.array([lo, hi]))
    mu = float(y.mean())
    sigma = float((y[1] - y[0]) / 6.0)
    return BoxCoxFit(lam, mu, sigma, eps)


# --- power transform ----------------------------------------------------------

def test_boxcox_frozen_values():
    assert boxcox(1.0, 0.4) == pytest.approx(-0.6, abs=1e-12)
    assert boxcox(0.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    # (sqrt(0.25) - 1) / 0.5 = -1
    assert boxcox(0.5, 0.25) == pytest.approx(-1.0, abs=1e-12)
    assert boxcox(2.0, 0.5) == pytest.approx(-0.375, abs=1e-12)


def test_boxcox_log_branch_threshold():
    v = 0.37
    assert boxcox(1e-10, v) == pytest.approx(math.log(v), abs=1e-12)
    # just outside the branch cutoff the power form is continuous with log
    assert boxcox(1e-8, v) == pytest.approx(math.log(v), abs=1e-6)


def test_boxcox_rejects_nonpositive():
    with pytest.raises(DomainError):
        boxcox(0.5, 0.0)
    with pytest.raises(DomainError):
        boxcox(1.0, np.array([0.2, -0.1]))


def test_inverse_boxcox_frozen_values():
    assert inverse_boxcox(1.0, -0.6) == pytest.approx(0.4, abs=1e-12)
    assert inverse_boxcox(0.0, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert inverse_boxcox(0.5, -1.0) == pytest.approx(0.25, abs=1e-12)


def test_inverse_boxcox_domain_error():
    # lambda*y + 1 <= 0 has no real preimage
    with pytest.raises(DomainError):
        inverse_boxcox(1.0, -1.0)
    with pytest.raises(DomainError):
        inverse_boxcox(-0.5, 3.0)


@given(lam=st.one_of(st.just(0.0), st.floats(-2.0, 2.0).filter(lambda x: abs(x) > 1e-6)),
       v=st.floats(0.01, 0.99))
def test_boxcox_round_trip_property(lam, v):
    assert inverse_boxcox(lam, boxcox(lam, v)) == pytest.approx(v, rel=1e-9)


# --- lambda fitting -----------------------------------------------------------

def _loglik_grid_argmax(v: np.ndarray) -> float:
    """Independent dense-grid scan of the profile likelihood, step 0.001."""
    log_sum = np.log(v).sum()
    best_lam, best_ll = None, -np.inf
    for lam in np.arange(-2.0, 2.0 + 1e-12, 0.001):
        if abs(lam) < 1e-9:
            t = np.log(v)
        else:
            t = (np.power(v, lam) - 1.0) / lam
        var = t.var()
        if var <= 0.0:
            continue
        ll = -0.5 * v.size * np.log(var) + (lam - 1.0) * log_sum
        if ll > best_ll:
            best_lam, best_ll = lam, ll
    return best_lam


def test_fit_lambda_normal_samples_near_one():
    rng = np.random.default_rng(11)
    v = np.clip(rng.normal(0.5, 0.1, size=4000), 1e-3, 1.0 - 1e-3)
    lam = fit_boxcox_lambda(v)
    assert abs(lam - 1.0) <= 0.3
    assert abs(lam - _loglik_grid_argmax(v)) <= 0.01


def test_fit_lambda_lognormal_samples_near_zero():
    rng = np.random.default_rng(12)
    v = np.clip(np.exp(rng.normal(-2.0, 0.3, size=4000)), 1e-6, 1.0 - 1e-6)
    lam = fit_boxcox_lambda(v)
    assert abs(lam - 0.0) <= 0.3
    assert abs(lam - _loglik_grid_argmax(v)) <= 0.01


def test_fit_lambda_two_point_sample_in_range():
    v = np.array([0.2, 0.6] * 20)
    lam = fit_boxcox_lambda(v)
    assert -2.0 <= lam <= 2.0


def test_fit_lambda_rejects_degenerate_and_small():
    with pytest.raises(DegenerateSampleError):
        fit_boxcox_lambda(np.full(40, 0.25))
    with pytest.raises(DegenerateSampleError):
        fit_boxcox_lambda(np.linspace(0.1, 0.9, 29))
    with pytest.raises(DomainError):
        fit_boxcox_lambda(np.linspace(-0.1, 0.9, 40))


def test_fit_moments_two_point_symmetric():
    # log transform maps {e, 1/e} to {1, -1}: mean 0, population std 1
    mu, sigma = fit_moments([math.e, 1.0 / math.e] * 25, 0.0)
    assert mu == pytest.approx(0.0, abs=1e-12)
    assert sigma == pytest.approx(1.0, abs=1e-12)


def test_fit_moments_degenerate():
    with pytest.raises(DegenerateSampleError):
        fit_moments([0.25, 0.25, 0.25], 1.0)
    with pytest.raises(DegenerateSampleError):
        fit_moments([], 1.0)


def test_fit_moments_beta_2_2_identity_lambda():
    rng = np.random.default_rng(13)
    v = rng.beta(2.0, 2.0, size=100_000)
    mu, sigma = fit_moments(v, 1.0)
    # Beta(2,2) shifted by -1: mean -0.5, var m*n/((m+n)^2(m+n+1)) = 1/20
    assert mu == pytest.approx(-0.5, abs=0.01)
    assert sigma == pytest.approx(math.sqrt(1.0 / 20.0), abs=0.01)


def test_fit_boxcox_bundles_lambda_and_moments():
    rng = np.random.default_rng(14)
    v = rng.beta(2.0, 5.0, size=2000)
    fit = fit_boxcox(v, epsilon=0.1)
    assert fit.epsilon == 0.1
    mu, sigma = fit_moments(v, fit.lambda_star)
    assert fit.mu == pytest.approx(mu) and fit.sigma == pytest.approx(sigma)
    assert fit.scale == pytest.approx(sigma * 1.1)


def test_boxcox_fit_validation():
    with pytest.raises(DegenerateSampleError):
        BoxCoxFit(1.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        BoxCoxFit(1.0, 0.0, 1.0, epsilon=-0.1)


# --- quality model ------------------------------------------------------------

def test_beta_model_validation_and_mean():
    with pytest.raises(DomainError):
        BetaQualityModel(1.5, 2.0)
    with pytest.raises(DomainError):
        BetaQualityModel(2.0, 1.99)
    assert BetaQualityModel(3.0, 2.0).mean == pytest.approx(0.6)


@pytest.mark.parametrize("m,n", [(2.0, 2.0), (3.0, 2.0)])
def test_sample_quality_mean_matches_density_quadrature(m, n):
    pdf_norm = math.gamma(m + n) / (math.gamma(m) * math.gamma(n))
    mean_oracle, _ = integrate.quad(
        lambda x: x * pdf_norm * x ** (m - 1) * (1 - x) ** (n - 1), 0.0, 1.0)
    rng = np.random.default_rng(21)
    draws = np.array([sample_quality(BetaQualityModel(m, n), rng) for _ in range(100_000)])
    assert np.all((draws > 0.0) & (draws < 1.0))
    assert draws.mean() == pytest.approx(mean_oracle, abs=0.01)


# --- normal helpers -----------------------------------------------------------

def test_normal_cdf_against_reference():
    x = np.linspace(-10.0, 10.0, 4001)
    assert np.max(np.abs(normal_cdf(x) - special.ndtr(x))) <= 1e-7
    assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-12)


def test_normal_cdf_table_value_by_density_integration():
    oracle, err = integrate.quad(lambda t: math.exp(-0.5 * t * t) / math.sqrt(2 * math.pi),
                                 -np.inf, 1.959964)
    assert err < 1e-8
    assert oracle == pytest.approx(0.975, abs=1e-6)
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)


def test_normal_quantile_against_reference():
    # 1e-8 absolute accuracy is promised on the |x| <= 6 working range; deeper
    # tails lose it to cancellation inside the Newton correction's CDF call
    lo = float(special.ndtr(-6.0))
    p = np.concatenate([np.geomspace(lo, 0.5, 400), 1.0 - np.geomspace(lo, 0.5, 400)])
    assert np.max(np.abs(normal_quantile(p) - special.ndtri(p))) <= 1e-8
    assert normal_quantile(0.5) == pytest.approx(0.0, abs=1e-12)


def test_normal_round_trip_and_domain():
    x = np.linspace(-6.0, 6.0, 241)
    assert np.max(np.abs(normal_quantile(normal_cdf(x)) - x)) <= 1e-6
    for bad in (0.0, 1.0, -0.2, 1.3):
        with pytest.raises(DomainError):
            normal_quantile(bad)


# --- forward/backward percentile maps ------------------------------------------

def test_forward_transform_frozen_examples():
    fit = BoxCoxFit(1.0, -0.5, 0.1, 0.0)
    # (boxcox(1, 0.6) - mu) / sigma = (-0.4 + 0.5) / 0.1 = 1
    assert forward_transform(fit, 0.6) == pytest.approx(0.8413447460685429, abs=1e-9)
    wide = BoxCoxFit(1.0, -0.5, 0.1, 1.0)
    assert forward_transform(wide, 0.6) == pytest.approx(0.6914624612740131, abs=1e-9)
    # any v mapping onto mu lands at the median
    assert forward_transform(fit, 0.5) == pytest.approx(0.5, abs=1e-12)


def test_backward_transform_frozen_examples():
    fit = BoxCoxFit(1.0, -0.5, 0.1, 0.0)
    assert backward_transform(fit, 0.8413447460685429) == pytest.approx(0.6, abs=1e-4)
    assert backward_transform(fit, 0.5) == pytest.approx(inverse_boxcox(1.0, -0.5), abs=1e-12)


def test_forward_monotone_and_epsilon_pulls_to_half():
    fit0 = _fit_covering(0.5, 0.0)
    fit1 = _fit_covering(0.5, 1.0)
    v = np.linspace(0.01, 0.99, 199)
    out0 = forward_transform(fit0, v)
    out1 = forward_transform(fit1, v)
    assert np.all(np.diff(out0) > 0.0)
    assert np.all(np.abs(out1 - 0.5) <= np.abs(out0 - 0.5) + 1e-15)
    off_center = np.abs(out0 - 0.5) > 1e-9
    assert np.all(np.abs(out1 - 0.5)[off_center] < np.abs(out0 - 0.5)[off_center])


def test_backward_monotone():
    fit = _fit_covering(-1.0, 0.1)
    a = np.linspace(0.01, 0.99, 99)
    assert np.all(np.diff(backward_transform(fit, a)) > 0.0)


@pytest.mark.parametrize("lam", RT_LAMBDAS)
@pytest.mark.parametrize("eps", RT_EPSILONS)
def test_round_trip_grid(lam, eps):
    fit = _fit_covering(lam, eps)
    v = np.linspace(0.01, 0.99, 99)
    assert np.max(np.abs(backward_transform(fit, forward_transform(fit, v)) - v)) <= 1e-6


def test_round_trip_spot_values():
    fit = _fit_covering(0.5, 0.1, lo=0.05, hi=0.95)
    for v in (0.1, 0.3, 0.7):
        assert backward_transform(fit, forward_transform(fit, v)) == pytest.approx(v, abs=1e-6)


def test_backward_clipped_saturates_instead_of_raising():
    # lambda=-1 has image y < 1; a wide-scale fit pushes mu + q*sigma past it
    # at the upper percentile clamp, where the exact inverse is undefined
    fit = BoxCoxFit(-1.0, boxcox(-1.0, 0.5), 0.5, 0.0)
    with pytest.raises(DomainError):
        backward_transform(fit, 1.0 - 1e-7)
    out = backward_transform_clipped(fit, 1.0 - 1e-7)
    assert np.isfinite(out) and out > 0.0
    # agreement with the exact inverse away from the saturated tail
    a = np.linspace(0.2, 0.8, 25)
    assert np.max(np.abs(backward_transform_clipped(fit, a) - backward_transform(fit, a))) <= 1e-12


def test_forward_percentiles_near_uniform_ks():
    # a power transform corrects skew, not kurtosis: right-skewed beta laws
    # normalize well, while symmetric platykurtic ones (e.g. shapes (2,2))
    # floor near KS 0.035 no matter the exponent
    rng = np.random.default_rng(31)
    fit = fit_boxcox(rng.beta(2.0, 5.0, size=100_000))
    fresh = rng.beta(2.0, 5.0, size=100_000)
    d = stats.kstest(forward_transform(fit, fresh), "uniform").statistic
    assert d <= 0.02


@settings(max_examples=60)
@given(lam=st.sampled_from(RT_LAMBDAS), eps=st.floats(0.0, 1.0), v=st.floats(0.02, 0.98))
def test_round_trip_property(lam, eps, v):
    fit = _fit_covering(lam, eps)
    assert backward_transform(fit, forward_transform(fit, v)) == pytest.approx(v, abs=1e-6)
