import math

import numpy as np
import pytest
from scipy import integrate

from sgmcmc.targets import (
    BENCHMARK_SETTINGS,
    DimensionError,
    NoiseSpec,
    energy,
    gauss_mix_1d,
    gauss_mix_posterior,
    gradient,
    lattice25,
    make_benchmark,
    noisy_energy,
    noisy_gradient,
    rugged2d,
    shallow_traps,
)


def fd_gradient(model, x, h=1e-6):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (energy(model, x + e) - energy(model, x - e)) / (2 * h)
    return g


def test_sphere_minimum():
    m = make_benchmark("Sphere")
    assert m.domain_dim == 30
    assert energy(m, np.zeros(30)) == 0.0
    np.testing.assert_array_equal(gradient(m, np.zeros(30)), np.zeros(30))
    assert m.metadata["u_min"] == 0.0


def test_lattice_origin():
    assert energy(lattice25(), [0.0, 0.0]) == pytest.approx(-4.0)


def test_lattice_minimum_is_origin():
    rng = np.random.default_rng(3)
    pts = rng.uniform(-4, 4, size=(200_000, 2))
    assert lattice25().energy(pts).min() >= -4.0


def test_shallow_traps_origin():
    assert energy(shallow_traps(2), [0.0, 0.0]) == pytest.approx(0.0)


def test_mixture_gradient_positive_in_right_tail():
    assert gradient(gauss_mix_1d(), [25.0])[0] > 0


def test_mixture_is_normalised():
    m = gauss_mix_1d()
    z, _ = integrate.quad(lambda x: math.exp(-float(energy(m, [x]))), -20, 20, points=[-3, 2])
    assert z == pytest.approx(1.0, abs=1e-8)


def test_unnormalised_gaussian_energy():
    m = gauss_mix_1d((1.0,), (0.0,), (1.0,), normalize=False)
    assert energy(m, [2.0]) == pytest.approx(2.0)


@pytest.mark.parametrize(
    "model",
    [lattice25(), gauss_mix_1d(), rugged2d(), shallow_traps(3)]
    + [make_benchmark(n) for n in sorted(BENCHMARK_SETTINGS)],
    ids=lambda m: m.name or m.kind,
)
def test_gradient_matches_finite_differences(model):
    rng = np.random.default_rng(11)
    box = model.metadata.get("box", (-2.0, 2.0))
    scale = min(2.0, abs(box[1]))
    for _ in range(3):
        x = rng.uniform(-scale, scale, model.domain_dim) * 0.5
        fd = fd_gradient(model, x)
        np.testing.assert_allclose(gradient(model, x), fd, rtol=1e-5, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_benchmark_metadata_from_table():
    r = make_benchmark("Rastrigin").metadata
    assert (r["lr"], r["tau"], r["rho"]) == (5e-4, 5.0, 75.0)
    a = make_benchmark("Ackley").metadata
    assert (a["lr"], a["tau"], a["rho"]) == (0.01, 0.05, 0.4)


def test_benchmark_rejects_other_dimension():
    with pytest.raises(DimensionError):
        make_benchmark("Griewank", 10)
    with pytest.raises(KeyError):
        make_benchmark("Nope")


def test_dimension_mismatch_rejected():
    with pytest.raises(DimensionError):
        energy(lattice25(), [0.0, 0.0, 0.0])


def test_noise_none_is_exact():
    rng = np.random.default_rng(0)
    m = lattice25()
    x = np.array([0.3, -0.7])
    assert noisy_energy(m, NoiseSpec.none(), x, rng) == energy(m, x)
    np.testing.assert_array_equal(noisy_gradient(m, NoiseSpec.none(), x, rng), gradient(m, x))


def test_gaussian_energy_noise_moments():
    rng = np.random.default_rng(1)
    m = lattice25()
    x = np.array([0.5, 0.5])
    draws = np.array([noisy_energy(m, NoiseSpec.gaussian(2.0), x, rng) for _ in range(100_000)])
    assert abs(draws.mean() - energy(m, x)) < 3 * 2 / math.sqrt(1e5)
    assert draws.std() == pytest.approx(2.0, rel=0.05)


def test_student_t_variance():
    rng = np.random.default_rng(2)
    spec = NoiseSpec(energy_noise="student_t", energy_scale=1.0, dof=5.0)
    draws = spec.draw_energy(rng, 1_000_000)
    assert draws.var() == pytest.approx(5 / 3, rel=0.1)
    assert spec.energy_variance == pytest.approx(5 / 3)


def test_gaussian_gradient_noise_mean():
    rng = np.random.default_rng(4)
    m = lattice25()
    x = np.array([0.2, 0.1])
    g = np.mean([noisy_gradient(m, NoiseSpec.gaussian(0.0, 2.0), x, rng) for _ in range(100_000)], axis=0)
    np.testing.assert_allclose(g, gradient(m, x), atol=4 * 2 / math.sqrt(1e5))


def test_noise_validation():
    with pytest.raises(ValueError):
        NoiseSpec(energy_noise="student_t", energy_scale=1.0, dof=2.0)
    with pytest.raises(ValueError):
        NoiseSpec(energy_noise="laplace")
    with pytest.raises(ValueError):
        NoiseSpec.gaussian(-1.0)


def test_posterior_full_batch_matches_energy():
    post = gauss_mix_posterior(n_data=500, seed=5)
    beta = np.array([-4.0, 1.0])
    np.testing.assert_allclose(post.batch_energy(beta, np.arange(500)), post.energy(beta[:, None]))
    g = fd_gradient(post, [-4.0], h=1e-5)
    np.testing.assert_allclose(gradient(post, [-4.0]), g, rtol=1e-5)


def test_posterior_data_is_reproducible():
    a = gauss_mix_posterior(n_data=100, seed=9)
    b = gauss_mix_posterior(n_data=100, seed=9)
    np.testing.assert_array_equal(a.data, b.data)


def test_posterior_empty_batch_rejected():
    post = gauss_mix_posterior(n_data=100, seed=9)
    with pytest.raises(ValueError):
        post.batch_energy(np.array([0.0]), np.array([], dtype=int))
