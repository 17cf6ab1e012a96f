"""Parametric discrete Hawkes benchmarks with negative-binomial excitation.

Four baseline forms share the kernel
``phi(d) = binom(d + r - 1, d) (1 - p)^d p^r``:

* ``constant``: ``gamma0``
* ``linear``: ``gamma0 + gamma1 t``
* ``sinusoidal``: ``gamma0 + gamma1 sin(2 pi t / P)``
* ``linear_sinusoidal``: ``gamma0 + gamma1 t + gamma2 sin(2 pi t / P)``

Fitting maximizes the Poisson log-likelihood with L-BFGS in an unconstrained
parameterization (log for ``gamma0`` and ``r``, logit for ``p``; the slope is
optimized per horizon length, ``gamma1 * T``), from several seeded starts.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, expit, gammaln, logit

from . import _accel
from .inference import LIKELIHOOD_FLOOR
from .simulate import nb_pmf

log = logging.getLogger(__name__)

FORMS = ("constant", "linear", "sinusoidal", "linear_sinusoidal")
FORM_LABELS = {
    "constant": "Discrete DHP",
    "linear": "Linear DHP",
    "sinusoidal": "Sinusoidal DHP",
    "linear_sinusoidal": "Linear + Sinusoidal DHP",
}
_CLI_FORMS = {"const": "constant", "linear": "linear", "sin": "sinusoidal", "linsin": "linear_sinusoidal"}


class FitError(RuntimeError):
    def __init__(self, message: str, diagnostics: list | None = None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


def normalize_form(form: str) -> str:
    form = _CLI_FORMS.get(form, form)
    if form not in FORMS:
        raise ValueError(f"unknown baseline form {form!r}")
    return form


@dataclass(frozen=True)
class ParametricDhpSpec:
    baseline_form: str
    gamma0: float
    gamma1: float = 0.0
    gamma2: float = 0.0
    period: float = 52.0
    r: float = 1.0
    p: float = 0.5
    d_max: int = 365
    loglik: float | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "baseline_form", normalize_form(self.baseline_form))
        if not self.r > 0:
            raise ValueError("r must be positive")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")

    def kernel(self) -> np.ndarray:
        return nb_pmf(np.arange(1, self.d_max + 1), self.r, self.p)

    def mu(self, t):
        return baseline_mu(self.baseline_form, (self.gamma0, self.gamma1, self.gamma2), t, self.period)

    @property
    def branching_ratio(self) -> float:
        return float(self.kernel().sum())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label"] = FORM_LABELS[self.baseline_form]
        d["branching_ratio"] = self.branching_ratio
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParametricDhpSpec":
        keys = {"baseline_form", "gamma0", "gamma1", "gamma2", "period", "r", "p", "d_max", "loglik", "diagnostics"}
        return cls(**{k: v for k, v in d.items() if k in keys})


def baseline_mu(form: str, gammas, t, period: float):
    t = np.asarray(t, dtype=np.float64)
    g0, g1, g2 = gammas
    if form == "constant":
        return np.full_like(t, g0)
    if form == "linear":
        return g0 + g1 * t
    sin = np.sin(2.0 * np.pi * t / period)
    if form == "sinusoidal":
        return g0 + g1 * sin
    return g0 + g1 * t + g2 * sin


def parametric_intensity(spec: ParametricDhpSpec, history, t=None, floor: float = LIKELIHOOD_FLOOR):
    """Intensity at 1-based times ``t`` (all bins of ``history`` by default).

    Returns ``(lambda, clamped)`` where ``clamped`` flags bins whose baseline
    was not positive and was raised to ``floor``.
    """
    history = np.asarray(history, dtype=np.float64)
    T = history.shape[0]
    if t is None:
        t = np.arange(1, T + 1)
    t = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if np.any(t < 1) or np.any(t > T):
        raise ValueError("t outside the available history")
    exc = _accel.excitation_sum(history[: int(t.max())], spec.kernel())
    mu = spec.mu(t)
    clamped = mu <= 0
    mu = np.where(clamped, floor, mu)
    return mu + exc[t - 1], clamped


def poisson_logpmf(n, lam):
    n = np.asarray(n, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    out = -lam - gammaln(n + 1.0)
    pos = n > 0
    out = np.where(pos, out + n * np.log(np.where(pos, lam, 1.0)), out)
    return out


# ---------------------------------------------------------------------------
# likelihood in unconstrained coordinates
# ---------------------------------------------------------------------------

P_MARGIN = 1e-12

_N_GAMMA = {"constant": 1, "linear": 2, "sinusoidal": 2, "linear_sinusoidal": 3}


def constrain(theta, form: str, T: int) -> dict:
    theta = np.asarray(theta, dtype=np.float64)
    k = _N_GAMMA[form]
    g = [float(np.exp(theta[0])), 0.0, 0.0]
    if form == "linear":
        g[1] = theta[1] / T
    elif form == "sinusoidal":
        g[1] = theta[1]
    elif form == "linear_sinusoidal":
        g[1] = theta[1] / T
        g[2] = theta[2]
    return {
        "gamma0": g[0],
        "gamma1": g[1],
        "gamma2": g[2],
        "r": float(np.exp(theta[k])),
        # keep p strictly inside (0, 1) when the optimum runs off to a boundary
        "p": float(np.clip(expit(theta[k + 1]), P_MARGIN, 1.0 - P_MARGIN)),
    }


def unconstrain(params: dict, form: str, T: int) -> np.ndarray:
    theta = [np.log(params["gamma0"])]
    if form == "linear":
        theta.append(params["gamma1"] * T)
    elif form == "sinusoidal":
        theta.append(params["gamma1"])
    elif form == "linear_sinusoidal":
        theta += [params["gamma1"] * T, params["gamma2"]]
    theta += [np.log(params["r"]), logit(params["p"])]
    return np.asarray(theta, dtype=np.float64)


def _negloglik(theta, counts, form, period, d_max, floor):
    T = counts.shape[0]
    k = _N_GAMMA[form]
    prm = constrain(theta, form, T)
    r, p = prm["r"], prm["p"]
    d = np.arange(1, d_max + 1, dtype=np.float64)
    phi = nb_pmf(d, r, p)
    dphi_r = phi * (digamma(d + r) - digamma(r) + np.log(p))
    dphi_p = phi * (r / p - d / (1.0 - p))
    exc = _accel.excitation_sum(counts, phi)
    t = np.arange(1, T + 1, dtype=np.float64)
    mu = baseline_mu(form, (prm["gamma0"], prm["gamma1"], prm["gamma2"]), t, period)
    active = mu > 0
    lam = np.where(active, mu, floor) + exc
    lam_safe = np.maximum(lam, floor)
    pos = counts > 0
    ll = float(np.sum(counts[pos] * np.log(lam_safe[pos])) - lam.sum() - gammaln(counts + 1.0).sum())
    resid = np.where(pos, counts / lam_safe, 0.0) - 1.0
    grad = np.empty(theta.shape[0])
    rm = resid * active
    sin = np.sin(2.0 * np.pi * t / period)
    grad[0] = prm["gamma0"] * rm.sum()
    if form == "linear":
        grad[1] = (rm * t).sum() / T
    elif form == "sinusoidal":
        grad[1] = (rm * sin).sum()
    elif form == "linear_sinusoidal":
        grad[1] = (rm * t).sum() / T
        grad[2] = (rm * sin).sum()
    grad[k] = r * float(resid @ _accel.excitation_sum(counts, dphi_r))
    grad[k + 1] = p * (1.0 - p) * float(resid @ _accel.excitation_sum(counts, dphi_p))
    return -ll, -grad


def loglik(spec: ParametricDhpSpec, counts, floor: float = LIKELIHOOD_FLOOR) -> float:
    """Full Poisson log-likelihood of ``counts`` (``log N!`` included)."""
    counts = np.asarray(counts, dtype=np.float64)
    lam, _ = parametric_intensity(spec, counts, floor=floor)
    return float(poisson_logpmf(counts, np.maximum(lam, floor)).sum())


def _starts(counts, form, n_starts, rng):
    T = counts.shape[0]
    mean = max(float(counts.mean()), 1e-3)
    out = []
    for i in range(n_starts):
        frac = 0.5 if i == 0 else rng.uniform(0.1, 0.9)
        prm = {
            "gamma0": mean * (1.0 - frac) * (1.0 if i == 0 else rng.uniform(0.7, 1.3)),
            "gamma1": 0.0,
            "gamma2": 0.0,
            "r": 1.0 if i == 0 else float(np.exp(rng.uniform(np.log(0.3), np.log(8.0)))),
            "p": 0.5 if i == 0 else rng.uniform(0.1, 0.9),
        }
        th = unconstrain(prm, form, T)
        if i and form != "constant":
            k = _N_GAMMA[form]
            th[1:k] = rng.normal(0.0, 0.1 * prm["gamma0"], size=k - 1)
        out.append(th)
    return out


def _newton_polish(theta, args, max_iter: int = 20, gtol: float = 1e-8):
    """Newton steps with a finite-difference Hessian of the analytic gradient."""
    f, g = _negloglik(theta, *args)
    k = theta.shape[0]
    for _ in range(max_iter):
        if not np.isfinite(f) or np.linalg.norm(g) <= gtol:
            break
        H = np.empty((k, k))
        for j in range(k):
            h = 1e-5 * max(1.0, abs(theta[j]))
            e = np.zeros(k)
            e[j] = h
            H[:, j] = (_negloglik(theta + e, *args)[1] - _negloglik(theta - e, *args)[1]) / (2 * h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            break
        eta = 1.0
        while eta > 1e-6:
            th_new = theta - eta * step
            f_new, g_new = _negloglik(th_new, *args)
            if np.isfinite(f_new) and (f_new < f or (f_new <= f + 1e-9 * abs(f) and np.linalg.norm(g_new) < np.linalg.norm(g))):
                break
            eta *= 0.5
        else:
            break
        theta, f, g = th_new, f_new, g_new
    return theta, float(f), g


def fit_parametric_mle(
    series,
    form: str,
    period: float = 52.0,
    d_max: int | None = None,
    n_starts: int = 8,
    seed: int = 0,
    floor: float = LIKELIHOOD_FLOOR,
    n_jobs: int = 1,
) -> ParametricDhpSpec:
    """Multi-start maximum likelihood; the best start wins, ties by start index."""
    form = normalize_form(form)
    counts = np.asarray(getattr(series, "counts", series), dtype=np.float64)
    T = counts.shape[0]
    if T < 2:
        raise ValueError("need at least two bins to fit")
    if d_max is None:
        d_max = max(1, min(T - 1, 365))
    rng = np.random.default_rng(seed)
    starts = _starts(counts, form, n_starts, rng)
    args = (counts, form, period, d_max, floor)

    def run(th0):
        try:
            res = minimize(_negloglik, th0, args=args, jac=True, method="L-BFGS-B",
                           options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-9, "maxcor": 20})
            th = res.x
            # polish: BFGS tends to drive the gradient further down than L-BFGS-B's ftol stop
            res2 = minimize(_negloglik, th, args=args, jac=True, method="BFGS", options={"gtol": 1e-8, "maxiter": 500})
            if np.isfinite(res2.fun) and res2.fun <= res.fun:
                res = res2
            th, nll, g = _newton_polish(res.x, args)
            return {"theta": th, "nll": nll, "grad_norm": float(np.linalg.norm(g)),
                    "success": bool(np.isfinite(nll)), "message": str(res.message)}
        except (FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            return {"theta": th0, "nll": np.inf, "grad_norm": np.inf, "success": False, "message": repr(exc)}

    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(run, starts))
    else:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            results = [run(th) for th in starts]
    ok = [(r["nll"], i) for i, r in enumerate(results) if r["success"] and np.isfinite(r["nll"])]
    if not ok:
        raise FitError("all starts failed", [{k: v for k, v in r.items() if k != "theta"} for r in results])
    _, best = min(ok)
    r = results[best]
    prm = constrain(r["theta"], form, T)
    diag = {"start": best, "grad_norm": r["grad_norm"], "message": r["message"], "n_starts": n_starts,
            "start_nll": [float(x["nll"]) for x in results],
            "at_boundary": bool(min(prm["p"], 1.0 - prm["p"]) < 1e-8)}
    return ParametricDhpSpec(form, prm["gamma0"], prm["gamma1"], prm["gamma2"], float(period),
                             prm["r"], prm["p"], int(d_max), -r["nll"], diag)


def negloglik_unconstrained(theta, counts, form, period=52.0, d_max=None, floor=LIKELIHOOD_FLOOR):
    """Negative log-likelihood and gradient in fitting coordinates (for checks)."""
    counts = np.asarray(counts, dtype=np.float64)
    if d_max is None:
        d_max = max(1, min(counts.shape[0] - 1, 365))
    return _negloglik(np.asarray(theta, dtype=np.float64), counts, normalize_form(form), period, d_max, floor)


def with_loglik(spec: ParametricDhpSpec, counts) -> ParametricDhpSpec:
    return replace(spec, loglik=loglik(spec, counts))


__all__ = [
    "FORMS",
    "FORM_LABELS",
    "FitError",
    "ParametricDhpSpec",
    "baseline_mu",
    "constrain",
    "fit_parametric_mle",
    "loglik",
    "negloglik_unconstrained",
    "normalize_form",
    "parametric_intensity",
    "poisson_logpmf",
    "unconstrain",
]
