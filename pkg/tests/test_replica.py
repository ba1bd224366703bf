import itertools
import math

import numpy as np
import pytest

from sgmcmc.replica import (
    ControlVariate,
    ResgldConfig,
    SmoothedScalar,
    StaleAnchorError,
    VRConfig,
    corrected_swap_prob,
    resgld_posterior_run,
    resgld_run,
    update_adaptive_coefficient,
    update_variance_estimate,
    vr_energy,
    vr_variance_probe,
)
from sgmcmc.targets import NoiseSpec, gauss_mix_1d, gauss_mix_posterior


@pytest.fixture(scope="module")
def posterior():
    return gauss_mix_posterior()


@pytest.fixture(scope="module")
def tiny_posterior():
    return gauss_mix_posterior(n_data=6, seed=3)


def test_swap_prob_equal_energies_no_correction():
    assert corrected_swap_prob(3.0, 3.0, 1.0, 10.0, 0.0) == 1.0


def test_swap_prob_hand_value():
    # dtau = 0.9, exponent 0.9 * (1 - 0.9 * 10) = -7.2
    p = corrected_swap_prob(1.0, 0.0, 1.0, 10.0, 10.0, F=1.0)
    assert p == pytest.approx(math.exp(-7.2))
    assert p == pytest.approx(7.47e-4, rel=1e-3)


def test_swap_prob_infinite_F_is_naive():
    naive = min(1.0, math.exp(0.9 * (-2.0)))
    assert corrected_swap_prob(-2.0, 0.0, 1.0, 10.0, 123.0, F=math.inf) == pytest.approx(naive)


def test_swap_prob_vectorised_and_validated():
    p = corrected_swap_prob(np.array([0.0, 5.0]), np.array([0.0, 0.0]), 1.0, 2.0, 0.0)
    np.testing.assert_allclose(p, [1.0, 1.0])
    with pytest.raises(ValueError):
        corrected_swap_prob(0.0, 0.0, 2.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        corrected_swap_prob(0.0, 0.0, 1.0, 2.0, -1.0)


def test_robbins_monro_running_mean():
    est = SmoothedScalar(100.0)
    for s in (4.0, 2.0, 6.0):
        est = update_variance_estimate(est, s)
    assert est.value == pytest.approx(4.0)
    assert est.update_count == 3


def test_fixed_smoothing():
    assert SmoothedScalar(100.0, "fixed", 0.3).update(0.0).value == pytest.approx(70.0)
    assert SmoothedScalar(5.0, "fixed", 1.0).update(2.5).value == 2.5
    with pytest.raises(ValueError):
        update_variance_estimate(SmoothedScalar(1.0), -1.0)


def test_adaptive_coefficient():
    c = update_adaptive_coefficient(SmoothedScalar(0.0), 3.0, 3.0)
    assert c.value == pytest.approx(-1.0)
    assert update_adaptive_coefficient(SmoothedScalar(0.0), 0.0, 2.0).value == 0.0
    assert update_adaptive_coefficient(SmoothedScalar(-0.5, "fixed", 0.5), 1.0, 1.0).value == pytest.approx(-0.75)
    same = SmoothedScalar(-0.2)
    assert update_adaptive_coefficient(same, 1.0, 0.0) is same


def test_vr_full_batch_is_exact(tiny_posterior):
    cv = ControlVariate.at(tiny_posterior, [2.0], period=5)
    e = vr_energy(tiny_posterior, cv, [0.5], np.arange(6))
    assert e[0] == pytest.approx(float(tiny_posterior.energy([0.5])))


def test_vr_at_anchor_is_exact(posterior):
    cv = ControlVariate.at(posterior, [-5.0], period=40)
    rng = np.random.default_rng(0)
    vals = [vr_energy(posterior, cv, [-5.0], rng.integers(0, posterior.n_data, 50))[0] for _ in range(5)]
    np.testing.assert_allclose(vals, cv.anchor_full_energy[0], rtol=1e-12)


def test_vr_unbiased_by_enumeration(tiny_posterior):
    cv = ControlVariate.at(tiny_posterior, [1.3], period=5)
    batches = list(itertools.combinations(range(6), 2))
    vals = [vr_energy(tiny_posterior, cv, [-0.7], np.array(b))[0] for b in batches]
    assert np.mean(vals) == pytest.approx(float(tiny_posterior.energy([-0.7])), rel=1e-12)


def test_vr_variance_law_and_optimal_coefficient(posterior):
    rng = np.random.default_rng(1)
    x, anchor = -4.9, -5.0
    idx = rng.integers(0, posterior.n_data, size=(4000, 200))
    a = posterior.batch_energy(np.full(4000, x), idx)
    b = posterior.batch_energy(np.full(4000, anchor), idx)
    v1, v2, cov = a.var(), b.var(), np.cov(a, b, bias=True)[0, 1]
    grid = np.linspace(-1.5, 0.5, 41)
    observed = np.array([(a + c * b).var() for c in grid])
    np.testing.assert_allclose(observed, v1 + grid**2 * v2 + 2 * grid * cov, rtol=1e-8)
    c_star = -cov / v2
    assert abs(grid[np.argmin(observed)] - c_star) <= 0.05 + 1e-12


def test_vr_variance_non_decreasing_in_period_and_eta(posterior):
    def var(period, eta):
        return vr_variance_probe(posterior, period=period, eta=eta, n_iter=320, n_batches=10, seed=4)[0]

    for eta in (1e-7, 4e-7):
        v = [var(p, eta) for p in (10, 40, 160)]
        assert v[0] <= v[1] <= v[2]
    for p in (10, 40, 160):
        assert var(p, 1e-7) <= var(p, 4e-7)


def test_stale_anchor_detected(posterior):
    cv = ControlVariate.at(posterior, [-5.0], period=10)
    vr_energy(posterior, cv, [-5.0], np.arange(10), iteration=9)
    with pytest.raises(StaleAnchorError):
        vr_energy(posterior, cv, [-5.0], np.arange(10), iteration=10)


def test_resgld_identical_chains_always_swap():
    cfg = ResgldConfig(
        gauss_mix_1d(),
        NoiseSpec.none(),
        temperatures=(1.0, 1.0 + 1e-9),
        n_iter=200,
        sigma_estimator="fixed",
        sigma2_init=0.0,
        x0=[0.0],
    )
    res = resgld_run(cfg)
    assert res.swap_rate[0, 0] > 0.99


def test_resgld_reproducible_and_replications_independent():
    cfg = dict(model=gauss_mix_1d(), noise=NoiseSpec.gaussian(2.0), n_iter=500, replications=2, seed=3)
    a, b = resgld_run(ResgldConfig(**cfg)), resgld_run(ResgldConfig(**cfg))
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples[0], a.samples[1])


def test_resgld_config_validation():
    with pytest.raises(ValueError):
        ResgldConfig(gauss_mix_1d(), NoiseSpec.none(), temperatures=(2.0, 1.0))
    with pytest.raises(ValueError):
        ResgldConfig(gauss_mix_1d(), NoiseSpec.none(), sigma_estimator="bogus")


def test_posterior_run_variance_reduction_lowers_correction(posterior):
    vr = resgld_posterior_run(posterior, VRConfig(n_iter=300, seed=2))
    plain = resgld_posterior_run(posterior, VRConfig(n_iter=300, seed=2, variance_reduction=False))
    assert vr.sigma2_trace[-50:].mean() < 0.1 * plain.sigma2_trace[-50:].mean()
