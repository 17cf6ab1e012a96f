"""One-step-ahead predictive scoring and the cross-validation grid."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .decompose import Decomposition, project_components
from .inference import LIKELIHOOD_FLOOR, LatentFit, MapConfig, fit_map
from .kernels import BaselineKernelParams, ExcitationKernelParams, KernelHyperparams
from .linops import CollapsedKernelOperator
from .parametric import FORM_LABELS, ParametricDhpSpec, parametric_intensity, poisson_logpmf
from .series_io import CountSeries, SplitSpec, split_series

log = logging.getLogger(__name__)

BASELINE_EXTENSION_NOTE = (
    "held-out baseline = GP conditional mean K_b(test, train) K_b(train, train)^-1 b_hat(train), "
    "evaluated as K_b(test, train) alpha since b_hat(train) = K_b alpha"
)


@dataclass
class GpDhpModel:
    """A fitted GP-DHP: latent fit plus its decomposition on the training bins."""

    hp: KernelHyperparams
    fit: LatentFit
    decomposition: Decomposition
    K: CollapsedKernelOperator

    @property
    def T_train(self) -> int:
        return self.K.T

    @property
    def f_hat(self) -> np.ndarray:
        return self.decomposition.f_hat

    @property
    def kappa_hat(self) -> float:
        return self.decomposition.kappa_hat

    def baseline(self, t, alpha=None):
        """Baseline at 1-based times ``t``; beyond the training range, the GP extension."""
        alpha = self.fit.alpha if alpha is None else alpha
        b_train = self.decomposition.b_hat if alpha is self.fit.alpha else self.K.Kb.matvec(alpha)
        t = np.asarray(t, dtype=np.int64)
        out = np.empty(t.shape[0])
        inside = t <= self.T_train
        out[inside] = b_train[t[inside] - 1]
        if np.any(~inside):
            out[~inside] = self.K.Kb.cross_matvec(t[~inside].astype(np.float64), alpha)
        return out

    def intensity(self, history, t, alpha=None):
        """Latent intensity ``b(t) + sum_d N(t-d) f(d)`` from observed history."""
        history = np.asarray(history, dtype=np.float64)
        t = np.asarray(t, dtype=np.int64)
        f = self.f_hat if alpha is None else self.K.Kf.matvec(self.K.X.rmatvec(alpha))
        d_max = f.shape[0]
        exc = np.empty(t.shape[0])
        for i, ti in enumerate(t):
            lo = max(0, ti - 1 - d_max)
            window = history[lo : ti - 1][::-1]
            exc[i] = window @ f[: window.shape[0]]
        return self.baseline(t, alpha) + exc

    def summary(self) -> dict:
        return {
            "model": "GP-DHP",
            "hyperparams": self.hp.to_dict(),
            "kappa_hat": float(self.kappa_hat),
            "converged": bool(self.fit.converged),
            "T_train": self.T_train,
        }


def fit_gpdhp(train_counts, hp: KernelHyperparams, cfg: MapConfig | None = None) -> GpDhpModel:
    cfg = cfg or MapConfig()
    counts = np.asarray(getattr(train_counts, "counts", train_counts), dtype=np.float64)
    K = CollapsedKernelOperator(counts, hp, M=cfg.ski_points, dense=cfg.solver == "dense")
    fit = fit_map(counts, K.hp, cfg, K=K)
    dec = project_components(fit.ell_star, K, alpha=fit.alpha)
    return GpDhpModel(K.hp, fit, dec, K)


@dataclass
class EvalReport:
    model: str
    split: str
    total: float
    per_bin: np.ndarray
    t: np.ndarray
    floor_count: int = 0
    kappa_hat: float | None = None
    hyperparams: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "split": self.split,
            "pll": float(self.total),
            "n_bins": int(self.per_bin.shape[0]),
            "per_bin": self.per_bin.tolist(),
            "t": self.t.tolist(),
            "floor_count": int(self.floor_count),
            "kappa_hat": None if self.kappa_hat is None else float(self.kappa_hat),
            "hyperparams": self.hyperparams,
            "notes": self.notes,
        }


def predictive_loglik(
    model,
    series,
    eval_range: tuple[int, int],
    split_name: str = "",
    floor: float = LIKELIHOOD_FLOOR,
    predictive: str = "plugin",
    alpha_samples=None,
) -> EvalReport:
    """Sum of one-step-ahead Poisson log-probabilities over bins ``[start, stop)``.

    ``eval_range`` is 0-based and half-open. Each bin's intensity uses the
    observed counts before it. ``predictive="laplace"`` averages the Poisson
    probability over latent ``alpha`` samples (GP-DHP only).
    """
    counts = np.asarray(getattr(series, "counts", series), dtype=np.float64)
    start, stop = int(eval_range[0]), int(eval_range[1])
    if not 0 <= start <= stop <= counts.shape[0]:
        raise ValueError(f"eval range {eval_range} outside series of length {counts.shape[0]}")
    t = np.arange(start + 1, stop + 1)
    n = counts[start:stop]
    notes = []
    kappa = None
    hyper = {}
    if isinstance(model, GpDhpModel):
        if start < model.T_train:
            raise ValueError("GP-DHP evaluation range overlaps its training range")
        name = "GP-DHP"
        kappa = model.kappa_hat
        hyper = model.hp.to_dict()
        notes.append(BASELINE_EXTENSION_NOTE)
        if predictive == "laplace":
            if alpha_samples is None:
                raise ValueError("laplace predictive needs alpha samples")
            logs = []
            for a in np.asarray(alpha_samples).T:
                lam_s = np.maximum(model.intensity(counts, t, alpha=a), floor)
                logs.append(poisson_logpmf(n, lam_s))
            per_bin = logsumexp(np.vstack(logs), axis=0) - np.log(len(logs))
            lam = np.maximum(model.intensity(counts, t), 0.0)
            notes.append(f"Laplace-integrated predictive over {len(logs)} samples")
        else:
            lam = model.intensity(counts, t)
            per_bin = None
        low = (lam <= floor) & (n > 0)
    elif isinstance(model, ParametricDhpSpec):
        name = FORM_LABELS[model.baseline_form]
        kappa = model.branching_ratio
        hyper = model.to_dict()
        hyper.pop("diagnostics", None)
        if stop > 0:
            lam_all, clamped = parametric_intensity(model, counts[:stop], t if t.size else None, floor)
            lam = lam_all if t.size else np.zeros(0)
            if np.any(clamped):
                notes.append(f"baseline clamped to floor at {int(clamped.sum())} bins")
        else:
            lam = np.zeros(0)
        low = (lam <= floor) & (n > 0)
        per_bin = None
    else:
        raise TypeError(f"unsupported model type {type(model).__name__}")
    lam_eff = np.maximum(lam, floor)
    if per_bin is None:
        # bins with N = 0 and lambda <= 0 score log P(0 | 0) = 0
        per_bin = np.where(n > 0, poisson_logpmf(n, lam_eff), -np.maximum(lam, 0.0))
    return EvalReport(name, split_name, float(per_bin.sum()), per_bin, t, int(low.sum()), kappa, hyper, notes)


@dataclass(frozen=True)
class CvGrid:
    beta: tuple = (0.1, 0.2, 0.3, 0.4)
    sigma_b: tuple = (0.0001, 0.01, 1.0)
    ell_b: tuple = (1.0, 5.0, 100.0)
    sigma_lin: tuple = (0.0, 1e-2, 1e-4)
    sigma_f: tuple = (0.5, 1.0, 2.0)
    ell_f: tuple = (5.0, 10.0, 20.0, 30.0)

    def __post_init__(self):
        for name in ("beta", "sigma_b", "ell_b", "sigma_lin", "sigma_f", "ell_f"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ValueError(f"grid axis {name} is empty")
            object.__setattr__(self, name, vals)

    def __len__(self) -> int:
        return int(np.prod([len(getattr(self, a)) for a in self.axes()]))

    @staticmethod
    def axes():
        return ("beta", "sigma_b", "ell_b", "sigma_lin", "sigma_f", "ell_f")

    def cells(self):
        """Grid points in a fixed enumeration order (the tie-break order)."""
        for vals in itertools.product(*(getattr(self, a) for a in self.axes())):
            yield dict(zip(self.axes(), vals))

    def to_dict(self) -> dict:
        return {a: list(getattr(self, a)) for a in self.axes()}

    @classmethod
    def reduced(cls, **fixed) -> "CvGrid":
        """Table axes for ``beta`` and ``ell_f`` only; other axes pinned to ``fixed`` values."""
        base = {"sigma_b": (1.0,), "ell_b": (5.0,), "sigma_lin": (1e-2,), "sigma_f": (1.0,)}
        base.update({k: tuple(np.atleast_1d(v)) for k, v in fixed.items()})
        return cls(**base)


def cell_hyperparams(cell: dict, base: KernelHyperparams) -> KernelHyperparams:
    b, e = base.baseline, base.excitation
    return KernelHyperparams(
        BaselineKernelParams(cell["sigma_b"], cell["ell_b"], b.period, cell["sigma_lin"], b.eps_b, b.sigma_const),
        ExcitationKernelParams(cell["sigma_f"], cell["ell_f"], cell["beta"], e.eps_f, e.d_max),
    )


@dataclass
class CvResult:
    best: KernelHyperparams
    best_index: int
    best_score: float
    table: list

    def to_dict(self) -> dict:
        return {"best_index": self.best_index, "best_score": self.best_score,
                "best_hyperparams": self.best.to_dict(), "n_cells": len(self.table)}


def _score_cell(i, cell, train, full, valid_range, base, cfg):
    row = {"cell": i, **cell}
    try:
        hp = cell_hyperparams(cell, base)
        model = fit_gpdhp(train, hp, cfg)
        rep = predictive_loglik(model, full, valid_range, "valid")
        row.update(valid_pll=rep.total, kappa_hat=model.kappa_hat, converged=model.fit.converged,
                   floor_count=rep.floor_count, status="ok")
        if not np.isfinite(rep.total):
            row.update(status="failed: non-finite score")
    except Exception as exc:  # every cell failure is recorded, never fatal
        row.update(valid_pll=float("nan"), kappa_hat=float("nan"), converged=False, floor_count=0,
                   status=f"failed: {type(exc).__name__}: {exc}")
    return row


def cv_grid_search(
    series: CountSeries,
    split: SplitSpec,
    grid: CvGrid | None = None,
    cfg: MapConfig | None = None,
    base: KernelHyperparams | None = None,
    n_jobs: int = 1,
) -> CvResult:
    """Fit every grid cell on the training split and score the validation split.

    Failed cells are kept in the table and excluded from the argmax; ties go to
    the earliest cell in enumeration order.
    """
    grid = grid or CvGrid()
    cfg = cfg or MapConfig()
    base = base or KernelHyperparams()
    train, valid, _ = split_series(series, split)
    if len(train) == 0 or len(valid) == 0:
        raise ValueError("train and validation splits must be nonempty")
    train_counts = train.counts.astype(np.float64)
    full = series.counts[: valid.stop]
    vrange = (valid.start, valid.stop)
    cells = list(grid.cells())
    if n_jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(n_jobs) as pool:
            table = list(pool.map(lambda ic: _score_cell(ic[0], ic[1], train_counts, full, vrange, base, cfg),
                                  enumerate(cells)))
    else:
        table = [_score_cell(i, c, train_counts, full, vrange, base, cfg) for i, c in enumerate(cells)]
    for row in table:
        if row["status"] != "ok":
            log.warning("cv cell %d %s", row["cell"], row["status"])
    ok = [r for r in table if r["status"] == "ok"]
    if not ok:
        raise RuntimeError("every grid cell failed")
    best_row = max(ok, key=lambda r: (r["valid_pll"], -r["cell"]))
    best = cell_hyperparams(cells[best_row["cell"]], base)
    return CvResult(best, best_row["cell"], float(best_row["valid_pll"]), table)


__all__ = [
    "BASELINE_EXTENSION_NOTE",
    "CvGrid",
    "CvResult",
    "EvalReport",
    "GpDhpModel",
    "cell_hyperparams",
    "cv_grid_search",
    "fit_gpdhp",
    "predictive_loglik",
]
