"""MAP estimation of the latent intensity under the collapsed GP prior.

The objective is the Poisson log-likelihood of the rectified intensity
``lambda = max(0, ell)`` minus the GP energy ``0.5 ell^T K^{-1} ell``.

The optimizer keeps ``alpha = K^{-1} ell`` alongside ``ell`` and only ever
moves ``alpha``, with ``ell = K alpha``. The prior energy is then
``0.5 ell^T alpha`` and no solve against the (jitter-conditioned) ``K`` is
needed. A damped Newton step ``(K^{-1} + D + delta I) step = grad`` is
obtained from the system ``B = I + S K S`` with ``S^2 = D + delta``, whose
eigenvalues are bounded below by one:

    delta_alpha = g - S B^{-1} S K g,      step = K delta_alpha.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg as sla

from .kernels import KernelHyperparams
from .linops import CollapsedKernelOperator, ShiftedSystem, cg_solve

log = logging.getLogger(__name__)

LIKELIHOOD_FLOOR = 1e-10


@dataclass(frozen=True)
class MapConfig:
    max_newton_iter: int = 100
    grad_tol: float = 1e-6
    damping_init: float = 1e-3
    line_search_shrink: float = 0.5
    likelihood_floor: float = LIKELIHOOD_FLOOR
    init_mode: str = "smoothed_counts"
    cg_tol: float = 1e-8
    cg_max_iter: int | None = None
    solver: str = "operator"
    ski_points: int | None = None

    def __post_init__(self):
        if self.max_newton_iter < 1:
            raise ValueError("max_newton_iter must be positive")
        for name in ("grad_tol", "damping_init", "likelihood_floor", "cg_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")
        if self.init_mode not in ("mean_count", "smoothed_counts"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.solver not in ("operator", "dense"):
            raise ValueError(f"unknown solver {self.solver!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LatentFit:
    ell_star: np.ndarray
    alpha: np.ndarray
    objective_trace: list
    grad_norm_final: float
    converged: bool
    iterations: int
    cg_iterations: list = field(default_factory=list)
    message: str = ""

    @property
    def intensity(self) -> np.ndarray:
        return np.maximum(self.ell_star, 0.0)

    def to_dict(self) -> dict:
        return {
            "ell_star": self.ell_star.tolist(),
            "alpha": self.alpha.tolist(),
            "objective_trace": [float(v) for v in self.objective_trace],
            "grad_norm_final": float(self.grad_norm_final),
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "cg_iterations": [int(v) for v in self.cg_iterations],
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatentFit":
        return cls(
            np.asarray(d["ell_star"], dtype=np.float64),
            np.asarray(d["alpha"], dtype=np.float64),
            list(d.get("objective_trace", [])),
            float(d.get("grad_norm_final", np.nan)),
            bool(d.get("converged", False)),
            int(d.get("iterations", 0)),
            list(d.get("cg_iterations", [])),
            d.get("message", ""),
        )


def _counts_of(series):
    c = getattr(series, "counts", series)
    return np.asarray(c, dtype=np.float64)


def poisson_loglik_terms(ell, counts, floor: float = LIKELIHOOD_FLOOR):
    """Per-bin ``N log lambda - lambda`` with ``0 log 0 = 0`` and a floored log."""
    lam = np.maximum(ell, 0.0)
    out = -lam
    pos = counts > 0
    out[pos] += counts[pos] * np.log(np.maximum(lam[pos], floor))
    return out


def loglik_gradient(ell, counts, floor: float = LIKELIHOOD_FLOOR):
    g = -(ell > 0).astype(np.float64)
    live = (counts > 0) & (ell > floor)
    g[live] += counts[live] / ell[live]
    return g


def loglik_curvature(ell, counts, floor: float = LIKELIHOOD_FLOOR):
    """Diagonal ``D(t) = N(t) / lambda(t)^2`` on the active region ``ell > 0``."""
    D = np.zeros_like(ell)
    live = (counts > 0) & (ell > floor)
    D[live] = counts[live] / ell[live] ** 2
    return D


def map_objective(
    ell,
    series,
    K: CollapsedKernelOperator | None,
    alpha=None,
    floor: float = LIKELIHOOD_FLOOR,
    include_prior: bool = True,
    cg_tol: float = 1e-10,
) -> float:
    """Log-likelihood minus ``0.5 ell^T K^{-1} ell`` (additive constants dropped).

    ``alpha = K^{-1} ell`` may be supplied; otherwise it is solved for.
    """
    ell = np.asarray(ell, dtype=np.float64)
    counts = _counts_of(series)
    if ell.shape != counts.shape:
        raise ValueError("latent vector and counts differ in length")
    value = float(poisson_loglik_terms(ell, counts, floor).sum())
    if include_prior and K is not None:
        if alpha is None:
            res = K.solve(ell, tol=cg_tol)
            if not res.converged:
                log.warning("prior solve did not converge (residual %.2e)", res.residual)
            alpha = res.x
        value -= 0.5 * float(ell @ alpha)
    return value


def map_gradient(
    ell,
    series,
    K: CollapsedKernelOperator | None,
    alpha=None,
    floor: float = LIKELIHOOD_FLOOR,
    include_prior: bool = True,
    cg_tol: float = 1e-10,
):
    ell = np.asarray(ell, dtype=np.float64)
    counts = _counts_of(series)
    if ell.shape != counts.shape:
        raise ValueError("latent vector and counts differ in length")
    g = loglik_gradient(ell, counts, floor)
    if include_prior and K is not None:
        if alpha is None:
            alpha = K.solve(ell, tol=cg_tol).x
        g = g - alpha
    return g


def smoothed_counts(counts, window: int = 7):
    """Centered moving average; the window shrinks at the edges."""
    kernel = np.ones(window)
    num = np.convolve(counts, kernel, mode="same")
    den = np.convolve(np.ones_like(counts), kernel, mode="same")
    return num / den


class _NewtonSolver:
    """Solves ``(I + S K S) z = r`` by CG, or by Cholesky in dense mode."""

    def __init__(self, K: CollapsedKernelOperator, cfg: MapConfig):
        self.K = K
        self.cfg = cfg

    def solve_shifted(self, s, rhs):
        if self.K.dense_mode:
            B = np.eye(self.K.T) + s[:, None] * self.K._dense * s[None, :]
            return sla.cho_solve(sla.cho_factor(B, lower=True), rhs), 0
        res = cg_solve(ShiftedSystem(self.K, s), rhs, tol=self.cfg.cg_tol, max_iter=self.cfg.cg_max_iter)
        return res.x, res.iterations

    def solve_regularized(self, noise, rhs):
        """``(K + noise I)^{-1} rhs``."""
        if self.K.dense_mode:
            A = self.K._dense + noise * np.eye(self.K.T)
            return sla.cho_solve(sla.cho_factor(A, lower=True), rhs)
        K = self.K

        class _Op:
            def matvec(self, v):
                return K.matvec(v) + noise * v

            def diag(self):
                return K.diag() + noise

        return cg_solve(_Op(), rhs, tol=self.cfg.cg_tol, max_iter=self.cfg.cg_max_iter).x


def initial_alpha(counts, K: CollapsedKernelOperator, cfg: MapConfig, solver: _NewtonSolver):
    """Starting point ``alpha0`` with ``ell0 = K alpha0`` near the smoothed counts.

    ``alpha0 = (K + s I)^{-1} y``, i.e. ``ell0`` is the GP regression mean of
    the target ``y`` under noise variance ``s``; this avoids a solve against
    ``K`` alone.
    """
    if not np.any(counts):
        return np.zeros_like(counts)
    mean = float(counts.mean())
    if cfg.init_mode == "mean_count":
        y = np.full_like(counts, mean)
    else:
        y = smoothed_counts(counts)
    y = np.maximum(y, 0.1 * mean)
    return solver.solve_regularized(max(mean, 0.1), y)


def fit_map(
    series,
    hp: KernelHyperparams,
    cfg: MapConfig | None = None,
    K: CollapsedKernelOperator | None = None,
) -> LatentFit:
    """Damped Newton ascent with backtracking on the MAP objective.

    Never raises on non-convergence; the best iterate is returned with
    ``converged=False``.
    """
    cfg = cfg or MapConfig()
    counts = _counts_of(series)
    if counts.size == 0:
        raise ValueError("empty series")
    if K is None:
        K = CollapsedKernelOperator(counts, hp, M=cfg.ski_points, dense=cfg.solver == "dense")
    floor = cfg.likelihood_floor
    solver = _NewtonSolver(K, cfg)

    alpha = initial_alpha(counts, K, cfg, solver)
    ell = K.matvec(alpha)

    def objective(e, a):
        return float(poisson_loglik_terms(e, counts, floor).sum()) - 0.5 * float(e @ a)

    obj = objective(ell, alpha)
    trace = [obj]
    cg_its = []
    damping = cfg.damping_init
    converged = False
    message = "max_newton_iter reached"
    gnorm = np.inf
    it = 0
    for it in range(1, cfg.max_newton_iter + 1):
        g = loglik_gradient(ell, counts, floor) - alpha
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.grad_tol:
            converged = True
            message = "gradient tolerance reached"
            it -= 1
            break
        D = loglik_curvature(ell, counts, floor)
        accepted = False
        for _attempt in range(8):
            s = np.sqrt(D + damping)
            u = K.matvec(g)
            z, n_cg = solver.solve_shifted(s, s * u)
            cg_its.append(n_cg)
            dalpha = g - s * z
            step = K.matvec(dalpha)
            eta = 1.0
            while eta > 1e-10:
                a_new = alpha + eta * dalpha
                e_new = ell + eta * step
                obj_new = objective(e_new, a_new)
                if obj_new >= obj:
                    accepted = True
                    break
                eta *= cfg.line_search_shrink
            if accepted:
                break
            damping *= 10.0
        if not accepted:
            message = "line search could not increase the objective"
            break
        improvement = obj_new - obj
        alpha, ell, obj = a_new, e_new, obj_new
        trace.append(obj)
        damping = max(damping * (0.3 if eta == 1.0 else 3.0), 1e-12)
        if improvement <= 1e-14 * max(1.0, abs(obj)) and eta < 1.0:
            message = "objective stalled"
            break
    g = loglik_gradient(ell, counts, floor) - alpha
    gnorm = float(np.linalg.norm(g))
    converged = converged or gnorm <= cfg.grad_tol
    if converged:
        message = "gradient tolerance reached"
    return LatentFit(ell, alpha, trace, gnorm, converged, it, cg_its, message)


__all__ = [
    "LIKELIHOOD_FLOOR",
    "LatentFit",
    "MapConfig",
    "fit_map",
    "initial_alpha",
    "loglik_curvature",
    "loglik_gradient",
    "map_gradient",
    "map_objective",
    "poisson_loglik_terms",
    "smoothed_counts",
]
