import math

import numpy as np
import pytest

from sgmcmc.kernels import (
    BlockNoise,
    ChainState,
    DivergenceError,
    Schedule,
    apply_schedule,
    chain_generator,
    check_finite,
    sgd_step,
    sgld_run,
    sgld_step,
)
from sgmcmc.targets import NoiseSpec, TargetModel, gauss_mix_1d, lattice25


def flat(d=2):
    return TargetModel("flat", (), d, lambda x: np.zeros(x.shape[:-1]), lambda x: np.zeros_like(x))


def state(x, tau=1.0, lr=0.1, seed=0):
    return ChainState(np.asarray(x, dtype=float), tau, lr, np.random.default_rng(seed))


def test_zero_gradient_zero_temperature_is_fixed():
    s = sgld_step(state([0.3, -1.2], tau=0.0), flat(), NoiseSpec.none())
    np.testing.assert_array_equal(s.x, [0.3, -1.2])
    assert s.iteration == 1


def test_sgld_step_formula():
    m = lattice25()
    s0 = state([0.2, 0.4], tau=0.5, lr=0.01, seed=7)
    kick = np.random.default_rng(7).standard_normal(2)
    expected = s0.x - 0.01 * m.gradient(s0.x) + math.sqrt(2 * 0.01 * 0.5) * kick
    np.testing.assert_allclose(sgld_step(s0, m, NoiseSpec.none()).x, expected)


def test_sgld_step_deterministic_for_seed():
    a = sgld_step(state([1.0, 1.0], seed=3), lattice25(), NoiseSpec.gaussian(1.0, 1.0))
    b = sgld_step(state([1.0, 1.0], seed=3), lattice25(), NoiseSpec.gaussian(1.0, 1.0))
    np.testing.assert_array_equal(a.x, b.x)
    assert a.cached_noisy_energy == b.cached_noisy_energy


def test_multiplier_scales_drift():
    m = gauss_mix_1d()
    s0 = state([1.0], tau=0.0, lr=0.01)
    x1 = sgld_step(s0, m, NoiseSpec.none(), multiplier=-2.0).x
    np.testing.assert_allclose(x1, s0.x + 0.02 * m.gradient(s0.x))
    with pytest.raises(ValueError):
        sgld_step(s0, m, NoiseSpec.none(), multiplier=math.inf)


def test_sgd_zero_gradient_without_injection():
    s = sgd_step(state([0.5, 0.5]), flat(), NoiseSpec.none())
    np.testing.assert_array_equal(s.x, [0.5, 0.5])


def test_sgd_injection_at_zero_temperature_is_plain_sgd():
    m = lattice25()
    a = sgd_step(state([0.1, 0.2], seed=1), m, NoiseSpec.none(), inject_gaussian=(0.01, 0.0))
    b = sgd_step(state([0.1, 0.2], seed=1), m, NoiseSpec.none())
    np.testing.assert_array_equal(a.x, b.x)


def test_divergence_carries_iteration():
    s = state([1e13], tau=0.0, lr=1.0)
    bad = TargetModel("bad", (), 1, lambda x: x[..., 0], lambda x: -np.ones_like(x) * 1e13)
    with pytest.raises(DivergenceError) as info:
        sgld_step(s, bad, NoiseSpec.none())
    assert info.value.iteration == 1
    with pytest.raises(DivergenceError):
        check_finite(np.array([np.nan]), 5)


def test_constant_schedule_is_identity():
    s = state([0.0])
    assert apply_schedule(Schedule(), 10, s) is s


def test_decay_applied_once_after_start():
    s = state([0.0], lr=0.1)
    out = apply_schedule(Schedule("decay", factor=0.984, start_epoch=200), 201, s)
    assert out.learning_rate == pytest.approx(0.1 * 0.984)
    assert apply_schedule(Schedule("decay", factor=0.984, start_epoch=200), 150, s).learning_rate == 0.1


def test_anneal_temperature():
    s = state([0.0], tau=3.0)
    out = apply_schedule(Schedule("anneal", rate=1.02), 5, s)
    assert out.temperature == pytest.approx(3.0 / 1.02**5)


def test_cyclic_restarts_each_cycle():
    s = state([0.0])
    sch = Schedule("cyclic", cycles=2, eta0=0.5, total=100)
    assert apply_schedule(sch, 0, s).learning_rate == pytest.approx(0.5)
    assert apply_schedule(sch, 50, s).learning_rate == pytest.approx(0.5)
    assert apply_schedule(sch, 25, s).learning_rate == pytest.approx(0.25)


def test_schedule_validation():
    with pytest.raises(ValueError):
        Schedule("warmup")
    with pytest.raises(ValueError):
        Schedule("decay", factor=1.5)
    with pytest.raises(ValueError):
        apply_schedule(Schedule(), -1, state([0.0]))


def test_chain_state_validation():
    with pytest.raises(ValueError):
        state([0.0], tau=-1.0)
    with pytest.raises(ValueError):
        state([0.0], lr=0.0)


def test_block_noise_matches_direct_draws():
    g1, g2 = chain_generator(4, 0, 0), chain_generator(4, 0, 0)
    bn = BlockNoise([g1], 3, NoiseSpec.gaussian(2.0, 0.5), block=8)
    ref = g2.standard_normal((8, 7))
    for i in range(8):
        kick, gn, en = bn.next()
        np.testing.assert_allclose(kick[0], ref[i, :3])
        np.testing.assert_allclose(gn[0], 0.5 * ref[i, 3:6])
        assert en[0] == pytest.approx(2.0 * ref[i, 6])


def test_streams_differ_between_chains():
    a = chain_generator(0, 0, 0).standard_normal(4)
    b = chain_generator(0, 0, 1).standard_normal(4)
    assert not np.allclose(a, b)


def test_sgld_run_stationary_energy():
    tr = sgld_run(gauss_mix_1d((1.0,), (1.5,), (1.0,)), NoiseSpec.none(), 0.05, 1.0, 40_000, seed=2, x0=[0.0], thin=10)
    assert tr.energies.shape == (4000, 1)
    # E[U] = 1/2 + log(2 pi)/2 for a unit Gaussian; the step adds about 1% variance
    assert tr.energies[500:].mean() == pytest.approx(0.5 + 0.5 * math.log(2 * math.pi), abs=0.1)


def test_sgld_run_hitting_and_reproducibility():
    m = gauss_mix_1d((1.0,), (0.0,), (1.0,), normalize=False)
    a = sgld_run(m, NoiseSpec.none(), 0.1, 1.0, 5000, replications=3, seed=1, x0=[5.0], stop_threshold=0.5)
    b = sgld_run(m, NoiseSpec.none(), 0.1, 1.0, 5000, replications=3, seed=1, x0=[5.0], stop_threshold=0.5)
    np.testing.assert_array_equal(a.hitting, b.hitting)
    assert np.all(a.hitting > 0)
