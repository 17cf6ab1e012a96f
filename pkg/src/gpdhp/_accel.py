"""Hot inner loops, compiled with numba when available.

Every kernel here has two implementations with identical semantics: a
``@njit`` version and a pure-numpy fallback. The fallback is selected when
numba cannot be imported or when the environment variable
``GPDHP_DISABLE_NUMBA`` is set to a non-empty value other than ``0``.

The simulator kernels consume uniforms from the same ``numpy.random.Generator``
in the same order in both backends and perform the same floating-point
operations in the same order, so a fixed seed gives bit-identical counts
regardless of backend.
"""

from __future__ import annotations

import math
import os

import numpy as np

_FLAG = os.environ.get("GPDHP_DISABLE_NUMBA", "")
_DISABLED = _FLAG not in ("", "0")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Poisson sampling from a uniform stream
# ---------------------------------------------------------------------------


def _poisson_py(gen, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        # sequential-search inversion, one uniform per draw
        u = gen.random()
        k = 0
        p = math.exp(-lam)
        cdf = p
        while u > cdf:
            k += 1
            p *= lam / k
            cdf += p
            if p == 0.0 and cdf < u:
                break
        return k
    # transformed rejection (PTRS, Hormann 1993)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = gen.random() - 0.5
        v = gen.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return int(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
        if lhs <= -lam + k * loglam - math.lgamma(k + 1.0):
            return int(k)


_poisson_nb = njit(cache=True)(_poisson_py) if HAVE_NUMBA else _poisson_py


# ---------------------------------------------------------------------------
# Sequential discrete-Hawkes simulation
# ---------------------------------------------------------------------------


def _simulate_np(mu, kernel, gen, lam_max):
    T = mu.shape[0]
    D = kernel.shape[0]
    counts = np.zeros(T, dtype=np.int64)
    lam = np.zeros(T)
    exc = np.zeros(T + D + 1)
    for t in range(T):
        rate = mu[t] + exc[t]
        lam[t] = rate
        if not rate <= lam_max:
            return counts, lam, t
        n = _poisson_py(gen, rate)
        counts[t] = n
        if n > 0:
            exc[t + 1 : t + 1 + D] += n * kernel
    return counts, lam, -1


@njit(cache=True)
def _simulate_nb(mu, kernel, gen, lam_max):
    T = mu.shape[0]
    D = kernel.shape[0]
    counts = np.zeros(T, dtype=np.int64)
    lam = np.zeros(T)
    exc = np.zeros(T + D + 1)
    for t in range(T):
        rate = mu[t] + exc[t]
        lam[t] = rate
        if not rate <= lam_max:
            return counts, lam, t
        n = _poisson_nb(gen, rate)
        counts[t] = n
        if n > 0:
            for j in range(D):
                exc[t + 1 + j] += n * kernel[j]
    return counts, lam, -1


def simulate_counts(mu, kernel, gen, lam_max=1e7):
    """Draw counts sequentially; returns ``(counts, intensity, abort_index)``.

    ``abort_index`` is -1 on success, otherwise the first bin whose intensity
    exceeded ``lam_max`` (the remaining counts are zero).
    """
    mu = np.ascontiguousarray(mu, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if HAVE_NUMBA:
        counts, lam, bad = _simulate_nb(mu, kernel, gen, float(lam_max))
    else:
        counts, lam, bad = _simulate_np(mu, kernel, gen, float(lam_max))
    return counts, lam, int(bad)


# ---------------------------------------------------------------------------
# Truncated excitation sum  e(t) = sum_{d=1}^{min(t-1, D)} N(t-d) phi(d)
# ---------------------------------------------------------------------------


def _excitation_sum_np(counts, kernel):
    T = counts.shape[0]
    out = np.zeros(T)
    if T > 1 and kernel.shape[0]:
        out[1:] = np.convolve(counts, kernel)[: T - 1]
    return out


@njit(cache=True)
def _excitation_sum_nb(counts, kernel):
    T = counts.shape[0]
    D = kernel.shape[0]
    out = np.zeros(T)
    for s in range(T):
        n = counts[s]
        if n == 0.0:
            continue
        stop = min(D, T - 1 - s)
        for j in range(stop):
            out[s + 1 + j] += n * kernel[j]
    return out


def excitation_sum(counts, kernel):
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    kernel = np.ascontiguousarray(kernel, dtype=np.float64)
    if HAVE_NUMBA:
        return _excitation_sum_nb(counts, kernel)
    return _excitation_sum_np(counts, kernel)


# ---------------------------------------------------------------------------
# Diagonal of X Kf X^T, exact, for Jacobi preconditioning
# ---------------------------------------------------------------------------


def _lagged_quadform_np(counts, kf, block=1024):
    T = counts.shape[0]
    D = kf.shape[0]
    out = np.zeros(T)
    padded = np.concatenate([np.zeros(D), counts])
    # row t of the window view holds N(t-D), ..., N(t-1): the lag design with
    # its columns reversed, so pair it with kf reversed on both axes. Blocks are
    # copied to contiguous memory so the product goes through BLAS.
    windows = np.lib.stride_tricks.sliding_window_view(padded[:-1], D)
    kf_rev = np.ascontiguousarray(kf[::-1, ::-1])
    for start in range(0, T, block):
        Z = np.ascontiguousarray(windows[start : start + block])
        out[start : start + block] = np.einsum("ij,ij->i", Z @ kf_rev, Z)
    return out


@njit(cache=True)
def _lagged_quadform_nb(counts, kf):
    T = counts.shape[0]
    D = kf.shape[0]
    out = np.zeros(T)
    idx = np.empty(D, dtype=np.int64)
    val = np.empty(D)
    for t in range(1, T):
        m = 0
        for j in range(min(D, t)):
            n = counts[t - 1 - j]
            if n != 0.0:
                idx[m] = j
                val[m] = n
                m += 1
        acc = 0.0
        for a in range(m):
            row = idx[a]
            inner = 0.0
            for b in range(m):
                inner += kf[row, idx[b]] * val[b]
            acc += val[a] * inner
        out[t] = acc
    return out


def lagged_quadform(counts, kf):
    """Return ``diag(X Kf X^T)`` where ``X`` is the lagged-count design."""
    counts = np.ascontiguousarray(counts, dtype=np.float64)
    kf = np.ascontiguousarray(kf, dtype=np.float64)
    if HAVE_NUMBA:
        # the sparse loop wins only when most bins are empty
        if np.count_nonzero(counts) < 0.25 * counts.shape[0]:
            return _lagged_quadform_nb(counts, kf)
    return _lagged_quadform_np(counts, kf)


__all__ = [
    "BACKEND",
    "HAVE_NUMBA",
    "excitation_sum",
    "lagged_quadform",
    "simulate_counts",
]
