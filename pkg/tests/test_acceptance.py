"""Acceptance criteria, one test per criterion.

Every test records a single ``PASS``/``FAIL``/``SKIP`` line with the measured
quantity next to its threshold. The lines are printed as they are produced and
repeated in the pytest terminal summary, so ``pytest tests/test_acceptance.py``
ends with a compact scorecard.

Criteria 7 and 8 run cross-validated fits on T = 4000 series and take a few
minutes each. Criterion 9 needs the weekly cryptosporidiosis counts as a CSV
pointed to by ``GPDHP_CRYPTO_CSV``; without it the criterion is reported as
skipped.
"""

import json
import os
import time

import numpy as np
import pytest

from gpdhp.cli import run
from gpdhp.decompose import project_components, quadratic_value
from gpdhp.evaluation import CvGrid, cv_grid_search, fit_gpdhp, predictive_loglik
from gpdhp.inference import MapConfig, fit_map, map_gradient, map_objective
from gpdhp.kernels import BaselineKernelParams, ExcitationKernelParams, KernelHyperparams
from gpdhp.linops import CollapsedKernelOperator, LagDesignOperator, collapsed_mvm
from gpdhp.parametric import fit_parametric_mle
from gpdhp.series_io import SplitSpec, load_counts
from gpdhp.simulate import BaselineFamilySpec, ExcitationFamilySpec, SimConfig, simulate_dhp

import oracles

SCORECARD = []


def record(label, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
    SCORECARD.append(line)
    print(line, flush=True)
    return passed


def record_skip(label, reason):
    line = f"[SKIP] {label}: {reason}"
    SCORECARD.append(line)
    print(line, flush=True)


def small_hyper(d_max=40, period=13.0):
    return KernelHyperparams(
        BaselineKernelParams(sigma_per=0.8, ell_per=2.0, period=period, sigma_lin=0.01, eps_b=0.1),
        ExcitationKernelParams(sigma_f=0.5, ell_f=10.0, beta=0.2, eps_f=0.05, d_max=d_max),
    )


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_c1_operator_matches_dense_matrix():
    t0 = time.perf_counter()
    r = np.random.default_rng(101)
    worst = 0.0
    for T in (64, 128, 256):
        hp = small_hyper(d_max=40)
        counts = r.poisson(1.0, T).astype(float)
        K = CollapsedKernelOperator(counts, hp, exact_excitation=True)
        Kd = oracles.dense_collapsed(counts, hp, 40)
        V = r.standard_normal((T, 5))
        ref = Kd @ V
        worst = max(worst, float(np.max(np.abs(collapsed_mvm(K, V) - ref)) / np.max(np.abs(ref))))
    secs = time.perf_counter() - t0
    ok = record("C1 operator vs dense", worst < 1e-10 and secs < 10,
                f"max rel err {worst:.2e} (< 1e-10), {secs:.1f}s (< 10s)")
    assert ok


def test_c2_adjointness_and_symmetry():
    r = np.random.default_rng(102)
    adj, sym = 0.0, 0.0
    for _ in range(20):
        T, d_max = int(r.integers(20, 400)), int(r.integers(1, 120))
        X = LagDesignOperator(r.poisson(1.5, T).astype(float), d_max)
        v, w = r.standard_normal(d_max), r.standard_normal(T)
        Xv = X.matvec(v)
        adj = max(adj, abs(Xv @ w - v @ X.rmatvec(w)) / (np.linalg.norm(Xv) * np.linalg.norm(w)))
    for _ in range(20):
        T = int(r.integers(20, 400))
        K = CollapsedKernelOperator(r.poisson(2.0, T).astype(float), small_hyper(d_max=min(T - 1, 80)))
        x, y = r.standard_normal(T), r.standard_normal(T)
        Kx, Ky = K.matvec(x), K.matvec(y)
        sym = max(sym, abs(Kx @ y - x @ Ky) / (np.linalg.norm(Kx) * np.linalg.norm(y)))
    ok = record("C2 adjointness/symmetry", adj < 1e-10 and sym < 1e-10,
                f"20+20 instances, worst adjoint gap {adj:.1e}, worst symmetry gap {sym:.1e} (< 1e-10)")
    assert ok


def test_c3_gradient_check():
    r = np.random.default_rng(103)
    T = 40
    counts = r.poisson(2.0, T).astype(float)
    K = CollapsedKernelOperator(counts, small_hyper(d_max=15), exact_excitation=True, dense=True)
    h, worst = 1e-5, 0.0
    for _ in range(10):
        # smooth points: strictly inside the positive region of the rectifier
        ell = r.uniform(0.5, 4.0, T)
        g = map_gradient(ell, counts, K)
        fd = np.array([(map_objective(ell + h * e, counts, K) - map_objective(ell - h * e, counts, K)) / (2 * h)
                       for e in np.eye(T)])
        worst = max(worst, float(np.max(np.abs(g - fd)) / np.max(np.abs(fd))))
    ok = record("C3 gradient check", worst < 1e-5, f"max rel err {worst:.2e} over 10 points (< 1e-5)")
    assert ok


def test_c4_decomposition_suite():
    r = np.random.default_rng(104)
    T, d_max = 128, 20
    hp = small_hyper(d_max=d_max)
    counts = r.poisson(1.5, T).astype(float)
    K = CollapsedKernelOperator(counts, hp, exact_excitation=True, dense=True)
    fit = fit_map(counts, hp, MapConfig(solver="dense"), K=K)
    dec = project_components(fit.ell_star, K)
    Kb, Kf = oracles.dense_kb(T, hp.baseline), oracles.dense_kf(d_max, hp.excitation)
    half = 0.5 * fit.ell_star @ np.linalg.solve(oracles.dense_collapsed(counts, hp, d_max), fit.ell_star)
    min_err = abs(dec.min_value - half) / abs(half)
    X = oracles.naive_lag_matrix(counts, d_max)
    best = quadratic_value(dec.b_hat, dec.f_hat, Kb, Kf)
    beaten = 0
    for _ in range(20):
        f2 = dec.f_hat + 0.05 * r.standard_normal(d_max)
        beaten += quadratic_value(fit.ell_star - X @ f2, f2, Kb, Kf) <= best
    ok = record("C4 decomposition", dec.residual < 1e-8 and min_err < 1e-8 and beaten == 0,
                f"residual {dec.residual:.1e} (< 1e-8), min-value rel err {min_err:.1e} (< 1e-8), "
                f"{beaten}/20 perturbations not worse (0)")
    assert ok


def test_c5_stationary_mean_rate():
    t0 = time.perf_counter()
    T, mu0 = 200_000, 1.0
    parts, ok = [], True
    for kappa in (0.3, 0.6, 0.86):
        spec = ExcitationFamilySpec("geometric", {"alpha": kappa, "p": 0.5}, 200)
        counts = simulate_dhp(BaselineFamilySpec(mu0), spec, SimConfig(T, seed=5)).series.counts
        m = mu0 / (1 - kappa)
        se = np.sqrt(m / (1 - kappa) ** 2 / T)
        z = abs(counts.mean() - m) / se
        ok &= z < 3
        parts.append(f"kappa={kappa}: {z:.2f} SE")
    secs = time.perf_counter() - t0
    ok = record("C5 simulator mean rate", ok and secs < 30, ", ".join(parts) + f" (< 3), {secs:.1f}s (< 30s)")
    assert ok


def _median_time(fn, reps=9):
    fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_c6_near_linear_scaling():
    t0 = time.perf_counter()
    r = np.random.default_rng(106)
    hp = small_hyper(d_max=None, period=52.0)
    times = {}
    for T in (2**13, 2**14):
        K = CollapsedKernelOperator(r.poisson(1.0, T).astype(float), hp)
        v = r.standard_normal(T)
        times[T] = _median_time(lambda: K.matvec(v))
    ratio = times[2**14] / times[2**13]
    secs = time.perf_counter() - t0
    ok = record("C6 scaling", ratio < 2.5 and secs < 60,
                f"time ratio T=2^14/2^13 = {ratio:.2f} (< 2.5), {secs:.1f}s (< 60s)")
    assert ok


SHARED_BASELINE = BaselineFamilySpec(1.0, 1e-4, 0.3, 0.2, 52.0)


@pytest.mark.parametrize("name,family,params", [
    ("geometric(0.8, 0.6)", "geometric", {"alpha": 0.8, "p": 0.6}),
    ("NB(0.6, 0.6, 2)", "negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 2}),
])
def test_c7_excitation_recovery(name, family, params):
    t0 = time.perf_counter()
    exc = ExcitationFamilySpec(family, params, 365)
    res = simulate_dhp(SHARED_BASELINE, exc, SimConfig(4000, seed=1))
    base = KernelHyperparams(BaselineKernelParams(period=52.0), ExcitationKernelParams(d_max=100))
    cv = cv_grid_search(res.series, SplitSpec(3000, 4000, 4000), CvGrid.reduced(), base=base)
    model = fit_gpdhp(res.series.counts[:3000], cv.best)
    err = rel_l2(model.f_hat[:30], res.kernel[:30])
    true_kappa = float(res.kernel.sum())
    gap = abs(model.kappa_hat - true_kappa)
    secs = time.perf_counter() - t0
    ok = record(f"C7 excitation recovery {name}", err < 0.35 and gap < 0.15 and secs < 1200,
                f"rel L2 {err:.3f} (< 0.35), kappa_hat {model.kappa_hat:.3f} vs {true_kappa:.3f} "
                f"(|diff| {gap:.3f} < 0.15), beta={cv.best.excitation.beta:g} ell_f={cv.best.excitation.ell_f:g}, "
                f"{secs:.0f}s (< 1200s)")
    assert ok


BASELINE_SCENARIOS = {
    "constant": BaselineFamilySpec(2.0),
    "linear": BaselineFamilySpec(1.0, 5e-4),
    "linear+periodic": BaselineFamilySpec(1.0, 5e-4, 0.8, 0.0, 52.0),
}


@pytest.fixture(scope="module")
def baseline_runs():
    exc = ExcitationFamilySpec("negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 2}, 365)
    grid = CvGrid(beta=(0.1, 0.2, 0.3, 0.4), sigma_b=(1.0,), ell_b=(1.0, 5.0, 100.0),
                  sigma_lin=(0.0, 1e-2, 1e-4), sigma_f=(1.0,), ell_f=(5.0, 10.0, 20.0, 30.0))
    base = KernelHyperparams(BaselineKernelParams(period=52.0), ExcitationKernelParams())
    out = {}
    for name, b in BASELINE_SCENARIOS.items():
        res = simulate_dhp(b, exc, SimConfig(4000, seed=11))
        cv = cv_grid_search(res.series, SplitSpec(3000, 4000, 4000), grid, base=base)
        out[name] = (res, fit_gpdhp(res.series.counts[:3000], cv.best))
    return out


def test_c8_baseline_recovery(baseline_runs):
    parts, ok = [], True
    for name, (res, model) in baseline_runs.items():
        mu, b_hat = res.baseline[:3000], model.decomposition.b_hat
        if np.ptp(mu) == 0:
            # Pearson r is undefined for a constant truth. sqrt(1 - 0.9^2) is the
            # relative residual that r = 0.9 allows, used here as the analogue.
            nrmse = rel_l2(b_hat, mu)
            ok &= nrmse < np.sqrt(1 - 0.9**2)
            parts.append(f"{name}: NRMSE {nrmse:.3f} (< {np.sqrt(1 - 0.81):.3f})")
        else:
            r = float(np.corrcoef(b_hat, mu)[0, 1])
            ok &= r > 0.9
            parts.append(f"{name}: r {r:.3f} (> 0.9)")
    fs = {k: m.f_hat for k, (_, m) in baseline_runs.items()}
    names = list(fs)
    for i in range(3):
        for j in range(i + 1, 3):
            a, b = fs[names[i]], fs[names[j]]
            d = float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b)))
            ok &= d < 0.3
            parts.append(f"f {names[i]}~{names[j]} {d:.3f} (< 0.3)")
    ok = record("C8 baseline recovery", ok, ", ".join(parts))
    assert ok


TARGET_PLL = {"GP-DHP": -285.1, "Constant DHP": -287.1}


def test_c9_cryptosporidiosis_ordering():
    path = os.environ.get("GPDHP_CRYPTO_CSV")
    if not path:
        record_skip("C9 cryptosporidiosis pLL", "dataset not available offline; set GPDHP_CRYPTO_CSV to a t,count CSV")
        pytest.skip("GPDHP_CRYPTO_CSV not set")
    series = load_counts(path)
    split = SplitSpec.parse(os.environ.get("GPDHP_CRYPTO_SPLIT", "219,292,365"))
    split.validate(len(series))
    base = KernelHyperparams(BaselineKernelParams(period=52.0), ExcitationKernelParams(d_max=52))
    cv = cv_grid_search(series, split, CvGrid(), base=base)
    stop, rng = split.valid_end, (split.valid_end, split.test_end)
    gp = predictive_loglik(fit_gpdhp(series.counts[:stop], cv.best), series, rng, "test").total
    const = predictive_loglik(fit_parametric_mle(series.counts[:stop], "const", period=52.0, d_max=52),
                              series, rng, "test").total
    near = abs(gp - TARGET_PLL["GP-DHP"]) < 10 and abs(const - TARGET_PLL["Constant DHP"]) < 10
    ok = record("C9 cryptosporidiosis pLL", gp > const and near,
                f"GP-DHP {gp:.1f} vs constant {const:.1f} (ordering), "
                f"targets -285.1 / -287.1 (|diff| < 10: {near})")
    assert ok


def test_c10_bench_on_synthetic_stand_in(tmp_path):
    # 21 years of daily bins with a 1972-1981 / 1982-1987 / 1988-1992 split,
    # sparse counts and a short-memory excitation with branching ratio
    # alpha * (1 - p) = 0.24
    train, valid, test = 3653, 5844, 7671
    cfg = {
        "simulate": {"T": test, "baseline": {"a": 0.25, "c": 0.05, "period": 365.0},
                     "excitation": {"family": "geometric-bench", "params": {"alpha": 0.48, "p": 0.5}, "d_max": 60}},
        "hyperparams": {"baseline": {"period": 365.0}, "excitation": {"d_max": 60}},
        "bench": {"n_starts": 4},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    assert run(["simulate", "--config", str(cfg_path), "--seed", "7", "--out", str(tmp_path / "sim")]) == 0
    rc = run(["bench", "--config", str(cfg_path), "--input", str(tmp_path / "sim" / "counts.csv"),
              "--split", f"{train},{valid},{test}", "--period", "365", "--out", str(tmp_path / "bench")])
    lines = (tmp_path / "bench" / "comparison_table.csv").read_text().strip().splitlines() if rc == 0 else []
    rows = [line.split(",") for line in lines[1:]]
    kappas = [float(r[2]) for r in rows]
    zeros = np.mean(np.loadtxt(tmp_path / "sim" / "counts.csv", delimiter=",", skiprows=1)[:, 1] == 0)
    ok = record("C10 bench on stand-in", rc == 0 and len(rows) == 5 and all(np.isfinite(kappas)),
                f"exit {rc}, {len(rows)} rows (5), kappa_hat " + " ".join(f"{r[0]}={r[2]}" for r in rows)
                + f", zero-count share {zeros:.2f}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
