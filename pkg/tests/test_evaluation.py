import math

import numpy as np
import pytest

from gpdhp.decompose import laplace_bands
from gpdhp.evaluation import CvGrid, GpDhpModel, cell_hyperparams, cv_grid_search, fit_gpdhp, predictive_loglik
from gpdhp.inference import MapConfig
from gpdhp.kernels import BaselineKernelParams, ExcitationKernelParams, KernelHyperparams
from gpdhp.parametric import ParametricDhpSpec, fit_parametric_mle, parametric_intensity
from gpdhp.series_io import CountSeries, SplitSpec
from gpdhp.simulate import BaselineFamilySpec, ExcitationFamilySpec, SimConfig, simulate_dhp

import oracles


def hyper(d_max=40):
    return KernelHyperparams(
        BaselineKernelParams(sigma_per=1.0, ell_per=5.0, period=52.0, sigma_lin=0.01, eps_b=1e-4),
        ExcitationKernelParams(sigma_f=1.0, ell_f=10.0, beta=0.2, eps_f=1e-4, d_max=d_max),
    )


@pytest.fixture(scope="module")
def sim():
    res = simulate_dhp(BaselineFamilySpec(1.0, 1e-4, 0.3, 0.2), ExcitationFamilySpec("nb", {"alpha": 0.6, "r": 2, "p": 0.6}, 60),
                       SimConfig(900, seed=12))
    return res.series


def test_per_bin_poisson_terms():
    spec = ParametricDhpSpec("constant", 1.0, r=1.0, p=0.5, d_max=3)
    rep0 = predictive_loglik(spec, np.array([0, 0, 0]), (2, 3))
    assert rep0.per_bin[0] == pytest.approx(-1.0, rel=1e-14)
    rep2 = predictive_loglik(spec, np.array([2]), (0, 1))
    assert rep2.per_bin[0] == pytest.approx(-1.69314718055994531, rel=1e-14)


def test_total_is_sum_of_terms(sim):
    spec = fit_parametric_mle(sim.counts[:600], "linsin", d_max=60, n_starts=2)
    rep = predictive_loglik(spec, sim, (600, 900), "test")
    assert abs(rep.total - rep.per_bin.sum()) <= 1e-10 * abs(rep.total)
    assert rep.per_bin.shape == (300,) and rep.t[0] == 601


def test_plugin_consistency_on_training_tail(sim):
    counts = sim.counts[:600]
    spec = fit_parametric_mle(counts, "const", d_max=60, n_starts=2)
    rep = predictive_loglik(spec, sim, (500, 600))
    lam, _ = parametric_intensity(spec, counts)
    train_terms = np.array([oracles.poisson_logpmf(int(n), l) for n, l in zip(counts[500:600], lam[500:600])])
    assert np.allclose(rep.per_bin, train_terms, rtol=1e-12, atol=1e-12)


def test_gp_model_rejects_training_range(sim):
    model = fit_gpdhp(sim.counts[:300], hyper())
    with pytest.raises(ValueError):
        predictive_loglik(model, sim, (250, 400))


def test_gp_baseline_extension_is_conditional_mean(sim):
    T = 300
    hp = hyper()
    model = fit_gpdhp(sim.counts[:T], hp)
    t_new = np.arange(T + 1, T + 60)
    kb = lambda a, b: oracles.baseline_cov_entry(a, b, 1.0, 5.0, 52.0, 0.01, 0.0)
    Kbb = oracles.dense_kb(T, model.hp.baseline)
    cross = np.array([[kb(a, b) for b in range(1, T + 1)] for a in t_new])
    expected = cross @ np.linalg.solve(Kbb, model.decomposition.b_hat)
    assert np.allclose(model.baseline(t_new), expected, rtol=1e-5, atol=1e-6)


def test_gp_intensity_uses_history(sim):
    model = fit_gpdhp(sim.counts[:300], hyper())
    t = np.arange(301, 320)
    counts = sim.counts.astype(float)
    f = model.f_hat
    exc = np.array([sum(counts[ti - 1 - d] * f[d - 1] for d in range(1, len(f) + 1) if ti - 1 - d >= 0) for ti in t])
    assert np.allclose(model.intensity(counts, t), model.baseline(t) + exc, rtol=1e-12)


def test_gp_pll_reports_kappa(sim):
    model = fit_gpdhp(sim.counts[:600], hyper())
    rep = predictive_loglik(model, sim, (600, 900), "test")
    assert np.isfinite(rep.total) and rep.kappa_hat == model.kappa_hat
    assert rep.model == "GP-DHP"


def test_laplace_predictive_option(sim):
    model = fit_gpdhp(sim.counts[:400], hyper(), MapConfig())
    bands = laplace_bands(model.fit, sim.counts[:400], model.K, n_samples=200, seed=0, keep_samples=True)
    rep = predictive_loglik(model, sim, (400, 500), predictive="laplace", alpha_samples=bands.alpha_samples)
    assert np.isfinite(rep.total) and rep.per_bin.shape == (100,)
    # identical samples collapse the averaged predictive onto the plug-in score
    same = np.repeat(model.fit.alpha[:, None], 5, axis=1)
    plug = predictive_loglik(model, sim, (400, 500))
    rep_same = predictive_loglik(model, sim, (400, 500), predictive="laplace", alpha_samples=same)
    assert rep_same.total == pytest.approx(plug.total, rel=1e-10)


def test_default_grid_axes():
    g = CvGrid()
    assert g.beta == (0.1, 0.2, 0.3, 0.4)
    assert g.sigma_b == (0.0001, 0.01, 1.0)
    assert g.ell_b == (1.0, 5.0, 100.0)
    assert g.sigma_lin == (0.0, 1e-2, 1e-4)
    assert g.sigma_f == (0.5, 1.0, 2.0)
    assert g.ell_f == (5.0, 10.0, 20.0, 30.0)
    assert len(g) == len(list(g.cells())) == 4 * 3 * 3 * 3 * 3 * 4


def test_cell_mapping():
    hp = cell_hyperparams({"beta": 0.3, "sigma_b": 0.01, "ell_b": 5.0, "sigma_lin": 1e-4, "sigma_f": 2.0, "ell_f": 20.0},
                          hyper())
    assert hp.baseline.sigma_per == 0.01 and hp.baseline.ell_per == 5.0 and hp.baseline.sigma_lin == 1e-4
    assert hp.excitation.beta == 0.3 and hp.excitation.sigma_f == 2.0 and hp.excitation.ell_f == 20.0


def test_single_cell_grid(sim):
    grid = CvGrid(beta=(0.2,), sigma_b=(1.0,), ell_b=(5.0,), sigma_lin=(0.01,), sigma_f=(1.0,), ell_f=(10.0,))
    res = cv_grid_search(sim, SplitSpec(500, 700, 900), grid, base=hyper())
    assert res.best_index == 0 and res.best.excitation.beta == 0.2


def test_failed_cell_is_excluded(sim):
    grid = CvGrid(beta=(0.2,), sigma_b=(-1.0, 1.0), ell_b=(5.0,), sigma_lin=(0.01,), sigma_f=(1.0,), ell_f=(10.0,))
    res = cv_grid_search(sim, SplitSpec(500, 700, 900), grid, base=hyper())
    assert res.best_index == 1
    assert res.table[0]["status"].startswith("failed")
    assert math.isnan(res.table[0]["valid_pll"])


def test_grid_determinism(sim):
    grid = CvGrid.reduced(beta=(0.1, 0.3), ell_f=(5.0, 20.0))
    a = cv_grid_search(sim, SplitSpec(500, 700, 900), grid, base=hyper())
    b = cv_grid_search(sim, SplitSpec(500, 700, 900), grid, base=hyper(), n_jobs=2)
    assert a.best_index == b.best_index
    assert [r["valid_pll"] for r in a.table] == [r["valid_pll"] for r in b.table]


def test_cv_scores_validation_only(sim):
    grid = CvGrid.reduced(beta=(0.2,), ell_f=(10.0,))
    res = cv_grid_search(sim, SplitSpec(500, 700, 900), grid, base=hyper())
    model = fit_gpdhp(sim.counts[:500], res.best)
    assert res.best_score == pytest.approx(predictive_loglik(model, sim, (500, 700)).total, rel=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_cv_recovers_beta_neighbourhood(seed):
    # synthetic data generated from the GP-DHP prior family at beta = 0.2:
    # an excitation shaped like a(d)^2 with beta = 0.2 and a smooth baseline
    d = np.arange(1, 366)
    f = 0.15 * np.exp(-0.2 * d)
    t = np.arange(1, 6001)
    mu = 1.0 + 0.3 * np.sin(2 * np.pi * t / 52)
    from gpdhp import _accel
    from gpdhp.simulate import make_rng

    counts, _, _ = _accel.simulate_counts(mu, f, make_rng(seed))
    res = cv_grid_search(CountSeries(counts), SplitSpec(4000, 6000, 6000), CvGrid(), base=hyper(d_max=365))
    assert res.best.excitation.beta in (0.1, 0.2, 0.3)
