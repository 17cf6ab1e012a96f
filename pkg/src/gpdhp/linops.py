"""Matrix-free operators for the collapsed GP prior.

The collapsed covariance of the latent intensity is

    K = K_b + X K_f X^T,

with ``X`` the strictly lower-triangular lagged-count design. Every factor
has a fast multiply:

* ``X`` and ``X^T`` are a linear convolution and a cross-correlation with the
  count sequence, done with zero-padded real FFTs; the transform of the counts
  is cached.
* ``K_f = A K_stat A + eps_f^2 I`` with ``A`` diagonal; ``K_stat`` is
  approximated by structured kernel interpolation ``W K_U W^T`` on a uniform
  grid of warped lags, so ``K_U`` is symmetric Toeplitz and multiplies through
  a circulant embedding.
* the periodic part of ``K_b`` is stationary on the integer grid, hence also
  Toeplitz; the linear and constant parts are rank one.

All ``matvec`` methods accept either a vector or a 2-D array whose columns
are multiplied independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy import linalg as sla

from . import _accel
from .kernels import (
    DENSE_CAP,
    BETA_LIMIT,
    BaselineKernelParams,
    ExcitationKernelParams,
    KernelHyperparams,
    amplitude_envelope,
    build_dense_baseline,
    build_dense_excitation,
    build_dense_warped_rbf,
    lag_warp,
    periodic_cov,
)


def _as_2d(v):
    v = np.asarray(v, dtype=np.float64)
    return (v[:, None], True) if v.ndim == 1 else (v, False)


class SymmetricToeplitz:
    """Symmetric Toeplitz matrix stored by its first row; FFT multiplies."""

    def __init__(self, first_row):
        first_row = np.asarray(first_row, dtype=np.float64)
        n = first_row.shape[0]
        self.n = n
        self.first_row = first_row
        self.nfft = sfft.next_fast_len(2 * n - 1, real=True) if n > 1 else 1
        circ = np.zeros(self.nfft)
        circ[:n] = first_row
        if n > 1:
            circ[-(n - 1) :] = first_row[1:][::-1]
        self._circ_hat = sfft.rfft(circ)

    def matvec(self, x):
        x, flat = _as_2d(x)
        if x.shape[0] != self.n:
            raise ValueError(f"expected length {self.n}, got {x.shape[0]}")
        y = sfft.irfft(self._circ_hat[:, None] * sfft.rfft(x, self.nfft, axis=0), self.nfft, axis=0)
        y = y[: self.n]
        return y[:, 0] if flat else y

    def dense(self):
        return sla.toeplitz(self.first_row)


class LagDesignOperator:
    """The ``T x d_max`` lagged-count design ``X[t, d] = N(t - d)``."""

    def __init__(self, counts, d_max: int):
        counts = np.asarray(counts, dtype=np.float64)
        self.counts = counts
        self.T = int(counts.shape[0])
        self.d_max = int(d_max)
        if self.d_max < 1:
            raise ValueError("d_max must be at least 1")
        self.nfft = sfft.next_fast_len(self.T + self.d_max, real=True)
        self._counts_hat = sfft.rfft(counts, self.nfft)
        self.is_zero = not np.any(counts)

    @property
    def shape(self):
        return (self.T, self.d_max)

    def matvec(self, v):
        """``X v``: ``w(t) = sum_{d=1}^{min(t-1, d_max)} N(t-d) v(d)``."""
        v, flat = _as_2d(v)
        if v.shape[0] != self.d_max:
            raise ValueError(f"expected length {self.d_max}, got {v.shape[0]}")
        out = np.zeros((self.T, v.shape[1]))
        if self.T > 1 and not self.is_zero:
            c = sfft.irfft(self._counts_hat[:, None] * sfft.rfft(v, self.nfft, axis=0), self.nfft, axis=0)
            out[1:] = c[: self.T - 1]
        return out[:, 0] if flat else out

    def rmatvec(self, y):
        """``X^T y``: ``z(d) = sum_t N(t-d) y(t)``."""
        y, flat = _as_2d(y)
        if y.shape[0] != self.T:
            raise ValueError(f"expected length {self.T}, got {y.shape[0]}")
        out = np.zeros((self.d_max, y.shape[1]))
        if not self.is_zero:
            r = sfft.irfft(np.conj(self._counts_hat)[:, None] * sfft.rfft(y, self.nfft, axis=0), self.nfft, axis=0)
            out[:] = r[1 : self.d_max + 1]
        return out[:, 0] if flat else out

    def dense(self):
        X = np.zeros((self.T, self.d_max))
        for d in range(1, min(self.d_max, self.T - 1) + 1):
            X[d:, d - 1] = self.counts[: self.T - d]
        return X


def lag_design_mvm(X: LagDesignOperator, v, transpose: bool = False):
    return X.rmatvec(v) if transpose else X.matvec(v)


def cubic_weights(x):
    """Lagrange weights on nodes 0, 1, 2, 3 at offsets ``x`` (shape ``(n, 4)``)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.empty(x.shape + (4,))
    w[..., 0] = -(x - 1.0) * (x - 2.0) * (x - 3.0) / 6.0
    w[..., 1] = x * (x - 2.0) * (x - 3.0) / 2.0
    w[..., 2] = -x * (x - 1.0) * (x - 3.0) / 2.0
    w[..., 3] = x * (x - 1.0) * (x - 2.0) / 6.0
    return w


@dataclass
class SkiOperator:
    """``W K_U W^T``: interpolation of the warped RBF from a uniform grid.

    Each row of ``W`` holds four cubic Lagrange weights on consecutive knots.
    Near the ends of the grid the stencil is shifted inward so it stays
    cubic. Rows sum to one.
    """

    grid: np.ndarray
    idx: np.ndarray
    weights: np.ndarray
    ku: SymmetricToeplitz

    @property
    def M(self) -> int:
        return int(self.grid.shape[0])

    @property
    def d_max(self) -> int:
        return int(self.idx.shape[0])

    def interp(self, z):
        """``W z`` (grid -> lags)."""
        z, flat = _as_2d(z)
        out = np.einsum("ik,ikj->ij", self.weights, z[self.idx])
        return out[:, 0] if flat else out

    def interp_t(self, y):
        """``W^T y`` (lags -> grid)."""
        y, flat = _as_2d(y)
        out = np.zeros((self.M, y.shape[1]))
        contrib = self.weights[:, :, None] * y[:, None, :]
        np.add.at(out, self.idx, contrib)
        return out[:, 0] if flat else out

    def matvec(self, v):
        return self.interp(self.ku.matvec(self.interp_t(v)))

    def interp_dense(self):
        W = np.zeros((self.d_max, self.M))
        np.add.at(W, (np.arange(self.d_max)[:, None], self.idx), self.weights)
        return W

    def dense(self):
        W = self.interp_dense()
        return W @ self.ku.dense() @ W.T


def build_ski(p: ExcitationKernelParams, M: int | None = None) -> SkiOperator:
    if p.d_max is None:
        raise ValueError("d_max must be resolved before building the SKI operator")
    d_max = int(p.d_max)
    if M is None:
        M = min(d_max, 128)
    M = int(M)
    if M < 4:
        raise ValueError("SKI needs at least 4 inducing points")
    u = lag_warp(np.arange(1, d_max + 1), p)
    lo, hi = float(u[0]), float(u[-1])
    if hi <= lo:
        hi = lo + 1.0
    grid = np.linspace(lo, hi, M)
    h = (hi - lo) / (M - 1)
    s = (u - lo) / h
    near = np.abs(s - np.round(s)) < 1e-9
    s = np.where(near, np.round(s), s)
    base = np.clip(np.floor(s).astype(np.int64) - 1, 0, M - 4)
    weights = cubic_weights(s - base)
    idx = base[:, None] + np.arange(4)[None, :]
    ku_row = np.exp(-0.5 * (h * np.arange(M)) ** 2)
    return SkiOperator(grid, idx, weights, SymmetricToeplitz(ku_row))


class BaselineOperator:
    """``K_b`` on ``t = 1..T``: Toeplitz periodic part plus rank-one terms."""

    def __init__(self, T: int, p: BaselineKernelParams):
        self.T = int(T)
        self.params = p
        self.t = np.arange(1, self.T + 1, dtype=np.float64)
        self.periodic = SymmetricToeplitz(periodic_cov(np.arange(self.T), p))

    def matvec(self, v):
        v, flat = _as_2d(v)
        p = self.params
        out = self.periodic.matvec(v) + p.eps_b**2 * v
        if p.sigma_lin > 0:
            out += p.sigma_lin**2 * np.outer(self.t, self.t @ v)
        if p.sigma_const > 0:
            out += p.sigma_const**2 * v.sum(axis=0)[None, :]
        return out[:, 0] if flat else out

    def diag(self):
        p = self.params
        return p.sigma_per**2 + p.sigma_lin**2 * self.t**2 + p.sigma_const**2 + p.eps_b**2

    def cross_matvec(self, t_new, v, chunk: int = 2048):
        """``K_b(t_new, 1..T) v`` for arbitrary (e.g. held-out) times ``t_new``."""
        p = self.params
        t_new = np.asarray(t_new, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        out = np.empty(t_new.shape[0])
        for start in range(0, t_new.shape[0], chunk):
            tn = t_new[start : start + chunk]
            # jitter only applies on coinciding times; held-out times never coincide
            block = periodic_cov(tn[:, None] - self.t[None, :], p)
            block += p.sigma_lin**2 * tn[:, None] * self.t[None, :] + p.sigma_const**2
            block += p.eps_b**2 * (tn[:, None] == self.t[None, :])
            out[start : start + chunk] = block @ v
        return out

    def dense(self):
        return build_dense_baseline(self.T, self.params, cap=max(self.T, DENSE_CAP))


class ExcitationOperator:
    """``K_f = A K_stat A + eps_f^2 I`` on lags ``1..d_max``.

    ``K_stat`` is applied through SKI by default; with ``exact=True`` it is
    materialized densely (small ``d_max`` only).
    """

    def __init__(self, p: ExcitationKernelParams, M: int | None = None, exact: bool = False):
        if p.d_max is None:
            raise ValueError("d_max must be resolved")
        self.params = p
        self.d_max = int(p.d_max)
        self.a = amplitude_envelope(np.arange(1, self.d_max + 1), p)
        # a cubic stencil needs four knots
        exact = exact or self.d_max < 4
        self.exact = exact
        if exact:
            self.ski = None
            self._kstat = build_dense_warped_rbf(p)
        else:
            self.ski = build_ski(p, M)
            self._kstat = None

    def stat_matvec(self, v):
        if self.exact:
            return self._kstat @ v
        return self.ski.matvec(v)

    def matvec(self, v):
        v, flat = _as_2d(v)
        a = self.a[:, None]
        out = a * self.stat_matvec(a * v) + self.params.eps_f**2 * v
        return out[:, 0] if flat else out

    def dense(self):
        kstat = self._kstat if self.exact else self.ski.dense()
        return self.a[:, None] * kstat * self.a[None, :] + self.params.eps_f**2 * np.eye(self.d_max)

    def exact_dense(self):
        """``K_f`` evaluated entrywise from the kernel, bypassing SKI."""
        return build_dense_excitation(self.params, cap=max(self.d_max, DENSE_CAP))


class CollapsedKernelOperator:
    """``K = K_b + X K_f X^T`` for a training count series.

    With ``dense=True`` the matrix is materialized once and solves use a
    Cholesky factorization; otherwise everything stays matrix-free.
    """

    def __init__(
        self,
        counts,
        hp: KernelHyperparams,
        M: int | None = None,
        exact_excitation: bool = False,
        dense: bool = False,
    ):
        counts = np.asarray(counts, dtype=np.float64)
        self.counts = counts
        self.T = int(counts.shape[0])
        d_max = hp.excitation.resolve_dmax(self.T)
        self.hp = KernelHyperparams(hp.baseline, hp.excitation.with_dmax(d_max))
        self.d_max = d_max
        self.Kb = BaselineOperator(self.T, self.hp.baseline)
        self.Kf = ExcitationOperator(self.hp.excitation, M=M, exact=exact_excitation)
        self.X = LagDesignOperator(counts, d_max)
        self._diag = None
        self._dense = None
        self._chol = None
        self.dense_mode = bool(dense)
        if dense:
            if self.T > DENSE_CAP:
                raise ValueError(f"dense mode refused for T={self.T} > {DENSE_CAP}")
            self._dense = self.assemble()

    @property
    def shape(self):
        return (self.T, self.T)

    def excitation_matvec(self, v):
        return self.X.matvec(self.Kf.matvec(self.X.rmatvec(v)))

    def matvec(self, v):
        if self._dense is not None:
            return self._dense @ np.asarray(v, dtype=np.float64)
        return self.Kb.matvec(v) + self.excitation_matvec(v)

    def diag(self):
        """Exact ``K(t, t)``, computed from the kernels rather than through SKI."""
        if self._diag is None:
            kf = self.Kf.exact_dense()
            self._diag = self.Kb.diag() + _accel.lagged_quadform(self.counts, kf)
        return self._diag

    def assemble(self):
        """Dense ``K`` built from this operator's factors (SKI ``K_f`` included)."""
        Xd = self.X.dense()
        K = self.Kb.dense() + Xd @ self.Kf.dense() @ Xd.T
        return 0.5 * (K + K.T)

    def cholesky(self):
        if self._chol is None:
            K = self._dense if self._dense is not None else self.assemble()
            self._chol = sla.cho_factor(K, lower=True)
        return self._chol

    def solve(self, rhs, tol: float = 1e-8, max_iter: int | None = None):
        """``K^{-1} rhs``; Cholesky in dense mode, Jacobi-preconditioned CG otherwise."""
        if self.dense_mode:
            x = sla.cho_solve(self.cholesky(), np.asarray(rhs, dtype=np.float64))
            return CGResult(x, 0, 0.0, True)
        return cg_solve(self, rhs, tol=tol, max_iter=max_iter)


def collapsed_mvm(K: CollapsedKernelOperator, v):
    return K.matvec(v)


def build_collapsed(counts, hp: KernelHyperparams, **kw) -> CollapsedKernelOperator:
    return CollapsedKernelOperator(counts, hp, **kw)


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def default_max_iter(n: int) -> int:
    return int(10 * np.sqrt(n) + 100)


def cg_solve(op, rhs, tol: float = 1e-8, max_iter: int | None = None, diag=None, x0=None) -> CGResult:
    """Jacobi-preconditioned conjugate gradients for an SPD operator.

    ``op`` needs ``matvec``; the preconditioner diagonal defaults to
    ``op.diag()``. ``rhs`` may hold several right-hand sides as columns, in
    which case all are iterated together and the reported residual is the
    worst relative residual. On non-convergence the best iterate seen is
    returned with ``converged=False``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(rhs, dtype=np.float64)
    flat = b.ndim == 1
    B = b[:, None] if flat else b
    n = B.shape[0]
    if max_iter is None:
        max_iter = default_max_iter(n)
    bnorm = np.linalg.norm(B, axis=0)
    if not np.any(bnorm > 0):
        x = np.zeros_like(b)
        return CGResult(x, 0, 0.0, True)
    scale = np.where(bnorm > 0, bnorm, 1.0)
    if diag is None:
        diag = op.diag() if hasattr(op, "diag") else np.ones(n)
    minv = 1.0 / np.asarray(diag, dtype=np.float64)[:, None]

    X = np.zeros_like(B) if x0 is None else np.array(x0, dtype=np.float64).reshape(B.shape)
    R = B - _mv(op, X) if x0 is not None else B.copy()
    Z = minv * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    rel = np.linalg.norm(R, axis=0) / scale
    best_x, best_rel = X.copy(), rel.max()
    it = 0
    while rel.max() > tol and it < max_iter:
        AP = _mv(op, P)
        pap = np.einsum("ij,ij->j", P, AP)
        active = (rel > tol) & (pap > 0)
        alpha = np.where(active, rz / np.where(pap > 0, pap, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        it += 1
        rel = np.linalg.norm(R, axis=0) / scale
        if rel.max() < best_rel:
            best_x, best_rel = X.copy(), rel.max()
        if not np.all(np.isfinite(rel)):
            break
        Z = minv * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        P = Z + beta * P
        rz = rz_new
    converged = bool(best_rel <= tol)
    x = best_x[:, 0] if flat else best_x
    return CGResult(x, it, float(best_rel), converged)


def _mv(op, X):
    if callable(op) and not hasattr(op, "matvec"):
        return op(X)
    return op.matvec(X)


class ShiftedSystem:
    """``B = I + S K S`` for a diagonal ``S``; the well-conditioned Newton system."""

    def __init__(self, K, s):
        self.K = K
        self.s = np.asarray(s, dtype=np.float64)
        self._kdiag = None

    def matvec(self, v):
        v = np.asarray(v, dtype=np.float64)
        s = self.s if v.ndim == 1 else self.s[:, None]
        return v + s * self.K.matvec(s * v)

    def diag(self):
        return 1.0 + self.s**2 * self.K.diag()


__all__ = [
    "BETA_LIMIT",
    "BaselineOperator",
    "CGResult",
    "CollapsedKernelOperator",
    "ExcitationOperator",
    "LagDesignOperator",
    "ShiftedSystem",
    "SkiOperator",
    "SymmetricToeplitz",
    "build_collapsed",
    "build_ski",
    "cg_solve",
    "collapsed_mvm",
    "cubic_weights",
    "default_max_iter",
    "lag_design_mvm",
]
