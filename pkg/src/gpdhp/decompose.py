"""Projection of the MAP latent trajectory onto baseline and excitation.

Given ``ell*``, the minimum-norm pair ``(b, f)`` with ``ell* = b + X f`` (norms
induced by ``K_b`` and ``K_f``) is

    b = K_b K^{-1} ell*,    f = K_f X^T K^{-1} ell*,

and the attained value of ``0.5 b^T K_b^{-1} b + 0.5 f^T K_f^{-1} f`` is
``0.5 ell*^T K^{-1} ell*``. Uncertainty comes from a Laplace approximation
``N(ell*, H^{-1})`` with ``H = K^{-1} + D`` pushed through the same (linear)
projection.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy import special

from .inference import LIKELIHOOD_FLOOR, LatentFit, loglik_curvature
from .kernels import DENSE_CAP
from .linops import CollapsedKernelOperator, ShiftedSystem, cg_solve

log = logging.getLogger(__name__)


class DecompositionError(RuntimeError):
    pass


class UnstableKernelWarning(UserWarning):
    pass


@dataclass
class Decomposition:
    b_hat: np.ndarray
    f_hat: np.ndarray
    kappa_hat: float
    min_value: float
    residual: float
    d_max: int

    def to_dict(self) -> dict:
        return {
            "b_hat": self.b_hat.tolist(),
            "f_hat": self.f_hat.tolist(),
            "kappa_hat": float(self.kappa_hat),
            "kappa_truncated_at_dmax": int(self.d_max),
            "min_value": float(self.min_value),
            "reconstruction_residual": float(self.residual),
            "stable": bool(self.kappa_hat < 1.0),
        }


@dataclass
class LaplaceBands:
    b_mean: np.ndarray
    b_lower: np.ndarray
    b_upper: np.ndarray
    f_mean: np.ndarray
    f_lower: np.ndarray
    f_upper: np.ndarray
    sample_count: int
    method: str
    b_samples: np.ndarray | None = None
    f_samples: np.ndarray | None = None
    complete: bool = True
    alpha_samples: np.ndarray | None = None

    def to_dict(self) -> dict:
        return {
            "b_lower": self.b_lower.tolist(),
            "b_upper": self.b_upper.tolist(),
            "f_lower": self.f_lower.tolist(),
            "f_upper": self.f_upper.tolist(),
            "sample_count": int(self.sample_count),
            "method": self.method,
            "complete": bool(self.complete),
        }


def branching_ratio(f_hat) -> float:
    """Sum of the positive part of the excitation; warns when it reaches one."""
    f_hat = np.asarray(f_hat, dtype=np.float64)
    kappa = float(np.maximum(f_hat, 0.0).sum())
    if kappa >= 1.0:
        warnings.warn(
            f"branching ratio {kappa:.3f} >= 1: the fitted process is not stable",
            UnstableKernelWarning,
            stacklevel=2,
        )
    return kappa


def project_components(
    ell_star,
    K: CollapsedKernelOperator,
    alpha=None,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> Decomposition:
    """Closed-form decomposition of ``ell*``.

    ``alpha = K^{-1} ell*`` is solved for unless supplied (a fit already
    carries it).
    """
    ell_star = np.asarray(ell_star, dtype=np.float64)
    if not np.all(np.isfinite(ell_star)):
        raise DecompositionError("latent trajectory is not finite")
    if alpha is None:
        res = K.solve(ell_star, tol=tol, max_iter=max_iter)
        if not res.converged:
            raise DecompositionError(
                f"CG did not converge: residual {res.residual:.3e} after {res.iterations} iterations"
            )
        alpha = res.x
    alpha = np.asarray(alpha, dtype=np.float64)
    b_hat = K.Kb.matvec(alpha)
    f_hat = K.Kf.matvec(K.X.rmatvec(alpha))
    recon = b_hat + K.X.matvec(f_hat)
    denom = np.linalg.norm(ell_star)
    residual = float(np.linalg.norm(ell_star - recon) / denom) if denom > 0 else float(np.linalg.norm(recon))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnstableKernelWarning)
        kappa = branching_ratio(f_hat)
    if kappa >= 1.0:
        log.warning("branching ratio %.3f >= 1", kappa)
    min_value = 0.5 * float(ell_star @ alpha)
    return Decomposition(b_hat, f_hat, kappa, min_value, residual, K.d_max)


def quadratic_value(b, f, Kb_dense, Kf_dense) -> float:
    """``0.5 b^T K_b^{-1} b + 0.5 f^T K_f^{-1} f`` from dense factors."""
    cb = sla.cho_factor(Kb_dense, lower=True)
    cf = sla.cho_factor(Kf_dense, lower=True)
    return 0.5 * float(b @ sla.cho_solve(cb, b)) + 0.5 * float(f @ sla.cho_solve(cf, f))


def projected_covariance(fit: LatentFit, counts, K: CollapsedKernelOperator, floor: float = LIKELIHOOD_FLOOR):
    """Dense ``[P_b; P_f] H^{-1} [P_b; P_f]^T`` (small ``T`` only).

    Uses ``K^{-1} H^{-1} K^{-1} = K^{-1} - S B^{-1} S`` with ``S = D^{1/2}`` and
    ``B = I + S K S``, so only well-posed factorizations are needed.
    """
    counts = np.asarray(counts, dtype=np.float64)
    T = K.T
    Kd = K.assemble()
    s = np.sqrt(loglik_curvature(fit.ell_star, counts, floor))
    Xd = K.X.dense()
    Mt = np.hstack([K.Kb.dense(), Xd @ K.Kf.dense()])  # columns: M^T
    L = sla.cholesky(Kd, lower=True)
    G = sla.solve_triangular(L, Mt, lower=True)
    C = G.T @ G
    B = np.eye(T) + s[:, None] * Kd * s[None, :]
    SM = s[:, None] * Mt
    C -= SM.T @ sla.cho_solve(sla.cho_factor(B, lower=True), SM)
    return 0.5 * (C + C.T)


def laplace_bands(
    fit: LatentFit,
    counts,
    K: CollapsedKernelOperator,
    n_samples: int = 1000,
    seed: int = 0,
    level: float = 0.95,
    floor: float = LIKELIHOOD_FLOOR,
    dense_cap: int = DENSE_CAP,
    cg_tol: float = 1e-8,
    max_iter: int | None = None,
    keep_samples: bool = False,
) -> LaplaceBands:
    """Pointwise credible bands for ``b`` and ``f`` from Laplace samples.

    A latent draw ``ell = ell* + delta`` with ``delta ~ N(0, H^{-1})`` maps to
    ``alpha`` increments ``K^{-1} delta = (I + D K)^{-1} (K^{-1} z1 + S z2)``
    with ``z1 ~ N(0, K)`` and ``z2 ~ N(0, I)``. Below ``dense_cap`` the
    factorizations are dense; above it every solve is CG.
    """
    if not fit.converged:
        log.warning("Laplace bands requested for a non-converged fit")
    counts = np.asarray(counts, dtype=np.float64)
    rng = np.random.default_rng(seed)
    T = K.T
    D = loglik_curvature(fit.ell_star, counts, floor)
    s = np.sqrt(D)
    complete = True
    if T <= dense_cap:
        method = "dense-cholesky"
        Kd = K.assemble()
        L = sla.cholesky(Kd, lower=True)
        xi = rng.standard_normal((T, n_samples))
        w = sla.solve_triangular(L, xi, lower=True, trans="T")  # K^{-1} z1, z1 = L xi
        w += s[:, None] * rng.standard_normal((T, n_samples))
        B = np.eye(T) + s[:, None] * Kd * s[None, :]
        z = sla.cho_solve(sla.cho_factor(B, lower=True), s[:, None] * (Kd @ w))
        dalpha = w - s[:, None] * z
    else:
        method = "cg-perturbation"
        z1 = _prior_draws(K, rng, n_samples)
        res = K.solve(z1, tol=cg_tol, max_iter=max_iter)
        complete &= res.converged
        w = res.x + s[:, None] * rng.standard_normal((T, n_samples))
        sys = ShiftedSystem(K, s)
        res2 = cg_solve(sys, s[:, None] * K.matvec(w), tol=cg_tol, max_iter=max_iter)
        complete &= res2.converged
        dalpha = w - s[:, None] * res2.x
        if not complete:
            log.warning("Laplace sampling solves did not fully converge; bands are approximate")
    alpha = fit.alpha
    b_mean = K.Kb.matvec(alpha)
    f_mean = K.Kf.matvec(K.X.rmatvec(alpha))
    b_s = b_mean[:, None] + K.Kb.matvec(dalpha)
    f_s = f_mean[:, None] + K.Kf.matvec(K.X.rmatvec(dalpha))
    lo, hi = 0.5 * (1 - level), 0.5 * (1 + level)
    bl, bu = np.quantile(b_s, [lo, hi], axis=1)
    fl, fu = np.quantile(f_s, [lo, hi], axis=1)
    # quantiles of a finite sample can miss the mode; keep the mean inside
    bl, bu = np.minimum(bl, b_mean), np.maximum(bu, b_mean)
    fl, fu = np.minimum(fl, f_mean), np.maximum(fu, f_mean)
    return LaplaceBands(
        b_mean,
        bl,
        bu,
        f_mean,
        fl,
        fu,
        n_samples,
        method,
        b_s if keep_samples else None,
        f_s if keep_samples else None,
        complete,
        alpha[:, None] + dalpha if keep_samples else None,
    )


def _periodic_series(p, tol: float = 1e-15):
    """Fourier coefficients of the periodic kernel.

    With ``z = 1 / ell_per^2``,
    ``sigma^2 exp(-2 sin^2(pi tau / P) / ell^2) = sigma^2 e^{-z} [I_0(z) + 2 sum_n I_n(z) cos(2 pi n tau / P)]``,
    so every coefficient is nonnegative and the expansion is an exact
    spectral representation. Terms are kept until the remaining mass is
    below ``tol`` relative to the variance.
    """
    z = 1.0 / p.ell_per**2
    n_max = int(np.ceil(z + 12.0 * np.sqrt(z) + 30.0))
    c = special.ive(np.arange(n_max + 1), z)
    c[1:] *= 2.0
    tail = np.cumsum(c[::-1])[::-1]
    keep = int(np.searchsorted(-tail, -tol * tail[0]))
    return p.sigma_per**2 * c[: max(keep, 1)]


def _prior_draws(K: CollapsedKernelOperator, rng, n: int):
    """Columns distributed as ``N(0, K)``: ``b0 + X f0`` with independent prior draws."""
    Kb, Kf = K.Kb, K.Kf
    p = Kb.params
    T = K.T
    t = Kb.t
    b0 = p.eps_b * rng.standard_normal((T, n))
    if p.sigma_per > 0:
        coef = _periodic_series(p)
        harm = np.arange(coef.shape[0])
        w = 2.0 * np.pi * t[:, None] * harm[None, :] / p.period
        scale = np.sqrt(coef)[:, None]
        b0 += np.cos(w) @ (scale * rng.standard_normal((coef.shape[0], n)))
        b0 += np.sin(w[:, 1:]) @ (scale[1:] * rng.standard_normal((coef.shape[0] - 1, n)))
    if p.sigma_lin > 0:
        b0 += p.sigma_lin * t[:, None] * rng.standard_normal(n)[None, :]
    if p.sigma_const > 0:
        b0 += p.sigma_const * rng.standard_normal(n)[None, :]
    kf = Kf.dense()
    Lf = np.linalg.cholesky(kf + 1e-12 * np.eye(kf.shape[0]))
    f0 = Lf @ rng.standard_normal((kf.shape[0], n))
    return b0 + K.X.matvec(f0)


__all__ = [
    "Decomposition",
    "DecompositionError",
    "LaplaceBands",
    "UnstableKernelWarning",
    "branching_ratio",
    "laplace_bands",
    "project_components",
    "projected_covariance",
    "quadratic_value",
]
