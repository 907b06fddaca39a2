"""Statistical verifier tests: wrapped-noise uniformity and reverse-step
moments, checked against their own machinery at reduced sample counts."""
import math

import numpy as np
import pytest

from pbcdiff import DiffusionSchedule
from pbcdiff.verify import (
    InsufficientSamplesError,
    irwin_hall_wrapped_density,
    posterior_mc_check,
    wrapped_gaussian_uniformity,
)


def test_ks_statistic_near_uniform_at_ratio_one():
    rep = wrapped_gaussian_uniformity(1.0, 100000, np.random.default_rng(5))
    assert rep.statistic < 0.01
    assert rep.sigma_ratio == 1.0
    assert rep.n_samples == 100000


def test_ks_statistic_decreases_with_sigma():
    # narrower Gaussians wrap to visibly non-uniform densities
    rng = np.random.default_rng
    narrow = wrapped_gaussian_uniformity(0.2, 100000, rng(5)).statistic
    mid = wrapped_gaussian_uniformity(0.35, 100000, rng(5)).statistic
    wide = wrapped_gaussian_uniformity(1.0, 100000, rng(5)).statistic
    assert wide < mid < narrow
    assert narrow > 0.1


def test_ks_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        wrapped_gaussian_uniformity(0.0, 100, rng)
    with pytest.raises(ValueError):
        wrapped_gaussian_uniformity(1.0, 0, rng)


def test_irwin_hall_identity_on_unit_interval():
    """The wrapped 12-fold uniform convolution is exactly flat.

    Checked at 1000 probe points against 1e-9, the acceptance tolerance.
    """
    ys = np.linspace(0.0, 1.0, 1000, endpoint=False)
    worst = max(abs(irwin_hall_wrapped_density(float(y)) - 1.0) for y in ys)
    assert worst < 1e-9


def test_irwin_hall_zero_outside():
    for y in (-0.5, -1e-9, 1.0, 1.5, 12.0):
        assert irwin_hall_wrapped_density(y) == 0.0


def test_irwin_hall_edge_points():
    assert irwin_hall_wrapped_density(0.0) == pytest.approx(1.0, abs=1e-9)
    assert irwin_hall_wrapped_density(1.0 - 1e-12) == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("t", [100, 250, 400])
def test_posterior_mc_mean_matches_formula(t):
    sched = DiffusionSchedule()
    rep = posterior_mc_check(t, sched, 200000, np.random.default_rng(7))
    assert rep.n_conditioned > 500
    rel = abs(rep.empirical_mean - rep.formula_mean) / abs(rep.formula_mean)
    assert rel < 0.02
    # the conditional distribution is Gaussian: higher moments vanish
    assert abs(rep.skew) < 0.3
    assert abs(rep.excess_kurtosis) < 0.6


def test_posterior_mc_supports_doubled_variance():
    """The forward chain's conditional variance is twice the sampler's.

    Both candidate formulas are reported; the Monte Carlo must land nearer
    the doubled one at every probed step.
    """
    sched = DiffusionSchedule()
    for t in (100, 250, 400):
        rep = posterior_mc_check(t, sched, 200000, np.random.default_rng(11))
        assert rep.posterior_var == pytest.approx(2.0 * rep.sampler_var, rel=1e-12)
        assert rep.supported == "posterior"
        assert abs(rep.empirical_var - rep.posterior_var) < abs(
            rep.empirical_var - rep.sampler_var
        )


def test_posterior_mc_custom_probe():
    sched = DiffusionSchedule()
    t = 250
    x0 = 0.2
    sigma = math.sqrt(sched.alpha(t))
    rep = posterior_mc_check(
        t, sched, 100000, np.random.default_rng(3), x0=x0, probe=x0 - 0.5 * sigma
    )
    assert rep.probe == pytest.approx(x0 - 0.5 * sigma)
    rel = abs(rep.empirical_mean - rep.formula_mean) / max(abs(rep.formula_mean), 1e-12)
    assert rel < 0.05


def test_posterior_mc_insufficient_samples():
    sched = DiffusionSchedule()
    # probe ten standard deviations out: nothing conditions
    sigma = math.sqrt(sched.alpha(250))
    with pytest.raises(InsufficientSamplesError):
        posterior_mc_check(
            250, sched, 1000, np.random.default_rng(0), probe=10.0 * sigma
        )


def test_posterior_mc_validation():
    sched = DiffusionSchedule()
    with pytest.raises(ValueError):
        posterior_mc_check(0, sched, 1000, np.random.default_rng(0))
    with pytest.raises(ValueError):
        posterior_mc_check(501, sched, 1000, np.random.default_rng(0))
