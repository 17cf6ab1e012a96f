"""Covariance functions for the baseline and excitation GP priors.

The baseline kernel is a periodic (seasonal) component plus a linear trend,
an optional constant, and diagonal jitter. The excitation kernel acts on
integer lags and is nonstationary: an amplitude envelope ``a(d)`` shrinks
long-lag variance, and a squared-exponential kernel is applied to warped lags
``g(d)`` so that remote lags are compressed together.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

DENSE_CAP = 4096
# below this the warp and envelope switch to their beta -> 0 limits
BETA_LIMIT = 1e-8


class DenseCapError(ValueError):
    """Raised when a dense builder is asked for a matrix above the cap."""


@dataclass(frozen=True)
class BaselineKernelParams:
    sigma_per: float = 1.0
    ell_per: float = 1.0
    period: float = 52.0
    sigma_lin: float = 0.0
    eps_b: float = 1e-4
    sigma_const: float = 0.0

    def __post_init__(self):
        if self.sigma_per < 0 or self.sigma_lin < 0 or self.sigma_const < 0:
            raise ValueError("baseline scales must be nonnegative")
        if self.ell_per <= 0:
            raise ValueError("ell_per must be positive")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if self.eps_b < 0:
            raise ValueError("eps_b must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ExcitationKernelParams:
    sigma_f: float = 1.0
    ell_f: float = 10.0
    beta: float = 0.1
    eps_f: float = 1e-4
    d_max: int | None = None

    def __post_init__(self):
        if self.sigma_f < 0:
            raise ValueError("sigma_f must be nonnegative")
        if self.ell_f <= 0:
            raise ValueError("ell_f must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.eps_f < 0:
            raise ValueError("eps_f must be nonnegative")
        if self.d_max is not None and int(self.d_max) < 1:
            raise ValueError("d_max must be at least 1")

    def resolve_dmax(self, T: int) -> int:
        """Maximum lag for a series of length ``T`` (default ``min(T-1, 365)``)."""
        if self.d_max is not None:
            return int(self.d_max)
        return max(1, min(T - 1, 365))

    def with_dmax(self, d_max: int) -> "ExcitationKernelParams":
        return ExcitationKernelParams(self.sigma_f, self.ell_f, self.beta, self.eps_f, int(d_max))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KernelHyperparams:
    baseline: BaselineKernelParams = BaselineKernelParams()
    excitation: ExcitationKernelParams = ExcitationKernelParams()

    def to_dict(self) -> dict:
        return {"baseline": self.baseline.to_dict(), "excitation": self.excitation.to_dict()}

    @classmethod
    def from_dict(cls, d: dict | None) -> "KernelHyperparams":
        d = d or {}
        return cls(
            BaselineKernelParams(**d.get("baseline", {})),
            ExcitationKernelParams(**d.get("excitation", {})),
        )


def amplitude_envelope(d, p: ExcitationKernelParams):
    """``a(d) = sigma_f * exp(-beta d / 2)``."""
    d = np.asarray(d, dtype=np.float64)
    if p.beta < BETA_LIMIT:
        return np.full_like(d, p.sigma_f)
    return p.sigma_f * np.exp(-0.5 * p.beta * d)


def lag_warp(d, p: ExcitationKernelParams):
    """``g(d) = (1 - exp(-beta d)) / (beta ell_f)``, or ``d / ell_f`` as beta -> 0."""
    d = np.asarray(d, dtype=np.float64)
    if p.beta < BETA_LIMIT:
        return d / p.ell_f
    return -np.expm1(-p.beta * d) / (p.beta * p.ell_f)


def periodic_cov(tau, p: BaselineKernelParams):
    """Stationary seasonal component as a function of the time difference."""
    s = np.sin(np.pi * np.asarray(tau, dtype=np.float64) / p.period)
    return p.sigma_per**2 * np.exp(-2.0 * s * s / p.ell_per**2)


def baseline_cov(t, s, p: BaselineKernelParams):
    t = np.asarray(t, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    out = periodic_cov(t - s, p) + p.sigma_lin**2 * t * s + p.sigma_const**2
    return out + p.eps_b**2 * (t == s)


def warped_rbf(d, d2, p: ExcitationKernelParams):
    """Stationary squared-exponential kernel evaluated on warped lags."""
    diff = lag_warp(d, p) - lag_warp(d2, p)
    return np.exp(-0.5 * diff * diff)


def excitation_cov(d, d2, p: ExcitationKernelParams):
    d = np.asarray(d, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    out = amplitude_envelope(d, p) * amplitude_envelope(d2, p) * warped_rbf(d, d2, p)
    return out + p.eps_f**2 * (d == d2)


def _check_cap(n: int, cap: int) -> None:
    if n > cap:
        raise DenseCapError(f"dense matrix of size {n} exceeds cap {cap}; use the operator path")


def build_dense_baseline(T: int, p: BaselineKernelParams, cap: int = DENSE_CAP) -> np.ndarray:
    _check_cap(T, cap)
    t = np.arange(1, T + 1, dtype=np.float64)
    K = baseline_cov(t[:, None], t[None, :], p)
    return 0.5 * (K + K.T)


def build_dense_excitation(p: ExcitationKernelParams, cap: int = DENSE_CAP) -> np.ndarray:
    if p.d_max is None:
        raise ValueError("d_max must be resolved before building the excitation matrix")
    _check_cap(p.d_max, cap)
    d = np.arange(1, p.d_max + 1, dtype=np.float64)
    K = excitation_cov(d[:, None], d[None, :], p)
    return 0.5 * (K + K.T)


def build_dense_warped_rbf(p: ExcitationKernelParams, cap: int = DENSE_CAP) -> np.ndarray:
    """``K_stat``: the RBF on warped lags, without envelope or jitter."""
    _check_cap(p.d_max, cap)
    d = np.arange(1, p.d_max + 1, dtype=np.float64)
    K = warped_rbf(d[:, None], d[None, :], p)
    return 0.5 * (K + K.T)
