import numpy as np
import pytest

from gpdhp.simulate import (
    BaselineFamilySpec,
    ExcitationFamilySpec,
    SimConfig,
    SimulationError,
    eval_family_kernel,
    nb_pmf,
    simulate_dhp,
)

import oracles


def test_geometric_simulation_convention():
    spec = ExcitationFamilySpec("geometric", {"alpha": 0.8, "p": 0.5})
    assert eval_family_kernel(spec, 1) == pytest.approx(0.4)


def test_nb_reduces_to_benchmark_geometric():
    spec = ExcitationFamilySpec("negative_binomial", {"alpha": 1.0, "r": 1.0, "p": 0.5})
    assert eval_family_kernel(spec, 1) == pytest.approx(0.25)


def test_power_law_value():
    spec = ExcitationFamilySpec("power_law", {"alpha": 20, "gamma": 2, "beta_pl": 4})
    assert eval_family_kernel(spec, 2) == pytest.approx(0.078125, rel=1e-15)


def test_bimodal_is_scaled_mixture_density():
    from scipy.stats import norm

    spec = ExcitationFamilySpec("bimodal_gaussian", {"alpha": 0.8, "mu1": 1, "mu2": 6, "sigma": 1})
    d = np.arange(1, 40)
    ref = 0.8 * (0.5 * norm.pdf(d, 1, 1) + 0.5 * norm.pdf(d, 6, 1))
    assert np.allclose(eval_family_kernel(spec, d), ref, rtol=1e-13)


def test_nb_generalized_binomial():
    from math import comb

    for d in range(1, 8):
        assert nb_pmf(d, 3.0, 0.4) == pytest.approx(comb(d + 2, d) * 0.6**d * 0.4**3, rel=1e-12)
    # non-integer r through the gamma function sums to one over d >= 0
    assert nb_pmf(np.arange(0, 2000), 2.5, 0.3).sum() == pytest.approx(1.0, rel=1e-12)


def test_unknown_family_and_bad_domain():
    with pytest.raises(ValueError):
        ExcitationFamilySpec("exponential", {"alpha": 1.0})
    with pytest.raises(ValueError):
        ExcitationFamilySpec("geometric", {"alpha": 0.5, "p": 1.5})
    with pytest.raises(ValueError):
        ExcitationFamilySpec("power_law", {"alpha": 1.0, "gamma": 1.0})


def test_poisson_law_of_large_numbers():
    T = 100_000
    res = simulate_dhp(BaselineFamilySpec(0.5), ExcitationFamilySpec("geometric", {"alpha": 0.0, "p": 0.5}, 10),
                       SimConfig(T, seed=4))
    assert abs(res.series.counts.mean() - 0.5) < 3 * np.sqrt(0.5 / T)


@pytest.mark.parametrize("kappa", [0.3, 0.6, 0.86])
@pytest.mark.parametrize("seed", [1, 2])
def test_stationary_mean_rate(kappa, seed):
    T, mu0 = 200_000, 1.0
    spec = ExcitationFamilySpec("geometric", {"alpha": kappa, "p": 0.5}, 200)
    res = simulate_dhp(BaselineFamilySpec(mu0), spec, SimConfig(T, seed=seed))
    target = mu0 / (1 - kappa)
    # long-run variance of the count series is target / (1 - kappa)^2
    se = np.sqrt(target / (1 - kappa) ** 2 / T)
    assert abs(res.series.counts.mean() - target) < 3 * se


def test_seed_determinism():
    b = BaselineFamilySpec(1.0, 1e-4, 0.3, 0.2)
    e = ExcitationFamilySpec("nb", {"alpha": 0.6, "r": 2, "p": 0.6}, 100)
    a1 = simulate_dhp(b, e, SimConfig(3000, seed=17)).series.counts
    a2 = simulate_dhp(b, e, SimConfig(3000, seed=17)).series.counts
    a3 = simulate_dhp(b, e, SimConfig(3000, seed=18)).series.counts
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, a3)


def test_intensity_dominates_baseline_and_matches_history():
    b = BaselineFamilySpec(1.0, 0.0, 0.5, 0.0, 20.0)
    e = ExcitationFamilySpec("power", {"alpha": 20, "gamma": 2, "beta_pl": 4}, 50)
    res = simulate_dhp(b, e, SimConfig(2000, seed=3))
    counts = res.series.counts
    assert counts.dtype.kind == "i" and np.all(counts >= 0)
    assert np.all(res.intensity >= res.baseline - 1e-12)
    expected = res.baseline + oracles.naive_excitation(counts.astype(float), res.kernel)
    assert np.allclose(res.intensity, expected, rtol=1e-12)


def test_supercritical_aborts():
    spec = ExcitationFamilySpec("geometric", {"alpha": 1.5, "p": 0.5}, 100)
    with pytest.raises(SimulationError) as err:
        simulate_dhp(BaselineFamilySpec(1.0), spec, SimConfig(10_000, seed=0))
    assert err.value.t is not None and err.value.t <= 10_000


def test_nonpositive_baseline_rejected():
    with pytest.raises(ValueError):
        simulate_dhp(BaselineFamilySpec(0.1, -1e-3), ExcitationFamilySpec("geometric", {"alpha": 0.5, "p": 0.5}),
                     SimConfig(500))


def test_metadata_reports_truncation():
    spec = ExcitationFamilySpec("power_law", {"alpha": 100, "gamma": 4, "beta_pl": 4}, 30)
    res = simulate_dhp(BaselineFamilySpec(1.0), spec, SimConfig(100, seed=0))
    d = np.arange(31, 200_031, dtype=float)
    assert res.metadata["tail_mass_beyond_dmax"] == pytest.approx(float((100 * (4 + d) ** -4.0).sum()), rel=1e-9)
    assert res.metadata["kernel_mass"] == pytest.approx(res.kernel.sum())
    assert res.metadata["seed"] == 0
