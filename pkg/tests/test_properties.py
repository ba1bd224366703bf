"""Randomised invariant checks, each run on at least a thousand generated cases."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from sgmcmc.contour import (
    PartitionSpec,
    ThetaVector,
    gradient_multiplier,
    random_field,
    sa_update,
)
from sgmcmc.kernels import ChainState, chain_generator, sgld_step
from sgmcmc.replica import corrected_swap_prob
from sgmcmc.schedule import RoundTripLog, SwapEvent, SwapSchedule, attempt_window_swaps, update_round_trips
from sgmcmc.targets import (
    BENCHMARK_SETTINGS,
    NoiseSpec,
    gauss_mix_1d,
    gauss_mix_posterior,
    lattice25,
    make_benchmark,
    noisy_energy,
    rugged2d,
    shallow_traps,
)

CASES = settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)


# --- contour theta vectors ----------------------------------------------------


def random_simplex(rng, m):
    return rng.dirichlet(np.ones(m))


def random_monotone(rng, m):
    v = np.sort(rng.uniform(0.01, 1.0, m))
    v[-1] = 1.0
    return v


@CASES
@given(seed=seeds, m=st.integers(2, 40), flavor=st.sampled_from(["csgld", "icsgld"]), zeta=st.floats(0.25, 2.0))
def test_simplex_conservation(seed, m, flavor, zeta):
    # 1000 cases with 1000 updates each
    rng = np.random.default_rng(seed)
    th = ThetaVector(flavor, random_simplex(rng, m))
    for J, om in zip(rng.integers(1, m + 1, 1000), rng.uniform(0.0, 0.05, 1000)):
        th = sa_update(th, random_field(flavor, th, int(J), zeta), float(om))
    assert abs(th.values.sum() - 1.0) < 1e-12
    assert np.all(th.values > 0)


@CASES
@given(seed=seeds, m=st.integers(2, 40))
def test_monotone_conservation(seed, m):
    rng = np.random.default_rng(seed)
    th = ThetaVector("awsgld", random_monotone(rng, m))
    for J, om in zip(rng.integers(1, m + 1, 300), rng.uniform(0.0, 0.5, 300)):
        th = sa_update(th, random_field("awsgld", th, int(J)), float(om))
        assert th.values[-1] == 1.0
    assert np.all(np.diff(th.values) >= 0)
    assert np.all(th.values > 0)


@CASES
@given(
    seed=seeds,
    m=st.integers(2, 60),
    du=st.floats(1e-3, 10.0),
    zeta=st.floats(0.1, 5.0),
    tau=st.floats(0.1, 10.0),
)
def test_awsgld_multiplier_at_least_one(seed, m, du, zeta, tau):
    rng = np.random.default_rng(seed)
    th = ThetaVector("awsgld", random_monotone(rng, m))
    spec = PartitionSpec(m, du, zeta=zeta, tau=tau)
    mult = gradient_multiplier(th, np.arange(1, m + 1), spec)
    assert np.all(mult >= 1.0)


# --- swap scheduling --------------------------------------------------------


@CASES
@given(seed=seeds, P=st.integers(2, 12), n=st.integers(0, 300))
def test_permutation_preservation(seed, P, n):
    rng = np.random.default_rng(seed)
    log = RoundTripLog(P)
    last = 0
    for k in range(n):
        ev = SwapEvent(k, int(rng.integers(0, P - 1)), bool(rng.random() < 0.7))
        update_round_trips(log, [ev], time=k)
        assert np.all(log.counts >= last)
        last = log.counts.copy()
    assert sorted(log.particle_at_chain.tolist()) == list(range(P))
    np.testing.assert_array_equal(log.chain_of_particle[log.particle_at_chain], np.arange(P))


@CASES
@given(seed=seeds, P=st.integers(2, 10), W=st.integers(1, 8), p=st.floats(0.0, 1.0))
def test_gate_at_most_one_swap_per_window(seed, P, W, p):
    rng = np.random.default_rng(seed)
    sched = SwapSchedule("DEO_W", P, W=W)
    states = list(range(P))
    accepted: dict = {}
    for k in range(12 * W):
        events = attempt_window_swaps(sched, k, states, lambda q, s: rng.random() < p)
        for ev in events:
            # off-parity pairs never attempt
            assert ev.pair % 2 == (k // W) % 2
            if ev.accepted:
                key = (k // W, ev.pair)
                accepted[key] = accepted.get(key, 0) + 1
    assert all(c <= 1 for c in accepted.values())
    assert sorted(states) == list(range(P))


# --- targets and kernels ----------------------------------------------------

MODELS = {
    "mix1d": (gauss_mix_1d(), 4.0),
    "lattice25": (lattice25(), 3.0),
    "rugged2d": (rugged2d(), 3.0),
    "traps": (shallow_traps(), 3.0),
    "posterior": (gauss_mix_posterior(n_data=50, seed=1), 10.0),
}
for _name in BENCHMARK_SETTINGS:
    MODELS[_name] = (make_benchmark(_name), 2.0)


def central_difference(f, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@CASES
@given(name=st.sampled_from(sorted(MODELS)), seed=seeds)
def test_gradient_matches_finite_differences(name, seed):
    model, box = MODELS[name]
    x = np.random.default_rng(seed).uniform(-box, box, model.domain_dim)
    if name == "Ackley":
        x += 0.1 * np.sign(x)  # keep away from the kink of the norm at the origin
    g = model.gradient(x)
    fd = central_difference(lambda z: float(model.energy(z)), x, 1e-5)
    assert np.linalg.norm(g - fd) <= 1e-5 * max(1.0, np.linalg.norm(g))


@CASES
@given(seed=seeds, tau=st.floats(0.0, 5.0), lr=st.floats(1e-4, 0.1), x=st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_seed_reproducibility(seed, tau, lr, x):
    model, noise = lattice25(), NoiseSpec.gaussian(1.0, 0.5)

    def run():
        s = ChainState(np.array(x), tau, lr, chain_generator(seed, 0, 0))
        for _ in range(5):
            s = sgld_step(s, model, noise)
        return s.x, noisy_energy(model, noise, s.x, chain_generator(seed, 1, 0))

    (a, ea), (b, eb) = run(), run()
    np.testing.assert_array_equal(a, b)
    assert ea == eb


@CASES
@given(
    u_low=st.floats(-20, 20),
    u_high=st.floats(-20, 20),
    tau_high=st.floats(1.01, 100.0),
    s1=st.floats(0.0, 50.0),
    s2=st.floats(0.0, 50.0),
    F1=st.floats(0.1, 100.0),
    F2=st.floats(0.1, 100.0),
)
def test_swap_probability_monotone(u_low, u_high, tau_high, s1, s2, F1, F2):
    lo_s, hi_s = sorted((s1, s2))
    lo_F, hi_F = sorted((F1, F2))
    p = lambda s, F: corrected_swap_prob(u_low, u_high, 1.0, tau_high, s, F=F)  # noqa: E731
    assert p(hi_s, lo_F) <= p(lo_s, lo_F) + 1e-15
    assert p(hi_s, lo_F) <= p(hi_s, hi_F) + 1e-15
    assert 0.0 <= p(hi_s, hi_F) <= 1.0
