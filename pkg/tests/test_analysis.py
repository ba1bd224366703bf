import numpy as np
import pytest
from scipy.special import ndtr

from sgmcmc.analysis import (
    CoverageError,
    ReferenceDensity,
    SummaryRow,
    format_value,
    hitting_time,
    kl_estimate,
    mode_mass,
    replicate_variance,
    round_trip_summary,
    write_csv,
    write_summary_csv,
)
from sgmcmc.targets import gauss_mix_1d, lattice25


@pytest.fixture(scope="module")
def lattice_ref():
    return ReferenceDensity.from_model(lattice25(), 1.0, cells=200)


def test_mode_mass_examples():
    np.testing.assert_array_equal(mode_mass([-3.0, -2.0, -1.0], [0.0]), [1.0, 0.0])
    np.testing.assert_array_equal(mode_mass([-1.0, 1.0, -2.0, 2.0], [0.0]), [0.5, 0.5])
    with pytest.raises(ValueError):
        mode_mass([1.0], [1.0, 0.0])


def test_mode_mass_on_mixture_draws():
    rng = np.random.default_rng(0)
    n = 100_000
    first = rng.random(n) < 0.4
    x = np.where(first, rng.normal(-3, 0.7, n), rng.normal(2, 0.5, n))
    truth = 0.4 * ndtr(2.5 / 0.7) + 0.6 * ndtr(-2.5 / 0.5)
    assert mode_mass(x, [-0.5])[0] == pytest.approx(truth, abs=0.01)


def test_reference_density_normalised(lattice_ref):
    assert lattice_ref.cell_mass.sum() == pytest.approx(1.0)
    assert lattice_ref.density.shape == (200, 200)


def test_kl_self_consistency(lattice_ref):
    rng = np.random.default_rng(1)
    flat = lattice_ref.cell_mass.ravel()
    cells = rng.choice(flat.size, size=1_000_000, p=flat / flat.sum())
    i, j = np.unravel_index(cells, lattice_ref.density.shape)
    cx, cy = lattice_ref.centres
    x = np.stack([cx[i], cy[j]], axis=1)
    assert kl_estimate(x, lattice_ref) < 0.02


def test_kl_exact_histogram_is_zero():
    ref = ReferenceDensity((np.array([0.0, 1.0, 2.0]),), np.array([0.25, 0.75]), 1.0)
    x = np.array([0.5, 1.5, 1.5, 1.5])
    assert kl_estimate(x, ref) == pytest.approx(0.0, abs=1e-7)


def test_kl_point_mass_is_large_and_ordered(lattice_ref):
    rng = np.random.default_rng(2)
    tight = rng.normal(0, 0.01, size=(20_000, 2))
    loose = rng.normal(0, 0.1, size=(20_000, 2))
    assert kl_estimate(tight, lattice_ref) > kl_estimate(loose, lattice_ref) > 1.0


def test_kl_coverage(lattice_ref):
    x = np.array([[10.0, 10.0], [0.0, 0.0]])
    with pytest.raises(CoverageError):
        kl_estimate(x, lattice_ref)
    assert np.isfinite(kl_estimate(x, lattice_ref, max_outside=0.6))


def test_hitting_time_examples():
    assert hitting_time([0.1, 5.0], 0.0, 0.5) == 0
    trace = np.arange(10.0, 0.0, -1.0)
    assert hitting_time(trace, 0.0, 3.0) == 7
    assert hitting_time([9.0, 8.0], 0.0, 1.0) is None
    with pytest.raises(ValueError):
        hitting_time([1.0], 0.0, 0.0)


def test_replicate_variance_examples():
    assert replicate_variance([3.0, 3.0, 3.0]) == 0.0
    assert replicate_variance([0.0, 2.0]) == pytest.approx(2.0)
    rng = np.random.default_rng(3)
    assert replicate_variance(rng.standard_normal(10_000)) == pytest.approx(1.0, rel=0.05)
    assert replicate_variance(np.array([[0.0, 1.0], [2.0, 1.0]])) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        replicate_variance([1.0])


def test_round_trip_summary():
    assert round_trip_summary([3, 2, 0], 2000) == {"round_trips": 5, "per_1000_iterations": 2.5}


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(True) == "1"
    assert format_value(None) == ""
    assert format_value(np.int64(7)) == "7"


def test_csv_round_trip(tmp_path):
    p = write_csv(tmp_path / "a" / "t.csv", ["x", "y"], [[1, 0.5], [2, float("inf")]])
    assert p.read_text() == "x,y\n1,0.5\n2,inf\n"
    q = write_summary_csv(tmp_path / "s.csv", [SummaryRow("m", 1.5, None, 3)])
    assert q.read_text() == "metric,value,stderr,replications\nm,1.5,,3\n"


def test_reference_from_1d_model():
    ref = ReferenceDensity.from_model(gauss_mix_1d(), bounds=((-8.0, 8.0),), cells=400)
    assert ref.normalization == pytest.approx(1.0, rel=1e-3)
