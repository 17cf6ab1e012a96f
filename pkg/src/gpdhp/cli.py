"""Command-line entry point: ``gpdhp <subcommand> [options]``.

Subcommands: simulate, fit, decompose, eval, cv, bench, figures. Structured
outputs are JSON, anything meant for plotting is CSV. Every output directory
receives ``config.resolved.json`` with the merged configuration, the tool
version, the backend and the root seed.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, _accel
from .decompose import laplace_bands, project_components
from .evaluation import CvGrid, cv_grid_search, fit_gpdhp, predictive_loglik
from .inference import LatentFit, MapConfig, fit_map
from .kernels import KernelHyperparams
from .linops import CollapsedKernelOperator
from .parametric import FORM_LABELS, fit_parametric_mle, normalize_form
from .series_io import CountSeries, SeriesError, SplitSpec, load_counts, save_counts, split_series, write_columns, write_json
from .simulate import BaselineFamilySpec, ExcitationFamilySpec, SimConfig, SimulationError, eval_family_kernel, simulate_dhp

log = logging.getLogger("gpdhp")

COMMANDS = ("simulate", "fit", "decompose", "eval", "cv", "bench", "figures")
MODELS = ("gpdhp", "const", "linear", "sin", "linsin")

DEFAULT_CONFIG = {
    "seed": 0,
    "hyperparams": {
        "baseline": {"sigma_per": 1.0, "ell_per": 5.0, "period": 52.0, "sigma_lin": 0.01, "eps_b": 1e-4, "sigma_const": 0.0},
        "excitation": {"sigma_f": 1.0, "ell_f": 10.0, "beta": 0.2, "eps_f": 1e-4, "d_max": None},
    },
    "map": {},
    "simulate": {
        "T": 6000,
        "baseline": {"a": 1.0, "b": 1e-4, "c": 0.3, "d": 0.2, "period": 52.0},
        "excitation": {"family": "geometric", "params": {"alpha": 0.8, "p": 0.6}, "d_max": 365},
    },
    "grid": None,
    "split": None,
    "model": "gpdhp",
    "fit_on": "train+valid",
    "laplace": {"n_samples": 1000},
    "bench": {"cv": False, "n_starts": 8},
    "n_jobs": 1,
}


class CliError(Exception):
    def __init__(self, code: str, message: str, context: dict | None = None, exit_code: int = 1):
        self.code = code
        self.context = context or {}
        self.exit_code = exit_code
        super().__init__(message)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if args.config:
        try:
            cfg = _merge(cfg, json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config_unreadable", str(exc), {"path": args.config}, 3) from exc
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    if args.split is not None:
        cfg["split"] = args.split
    if args.model is not None:
        cfg["model"] = args.model
    if args.period is not None:
        cfg["hyperparams"]["baseline"]["period"] = float(args.period)
        cfg["simulate"]["baseline"]["period"] = float(args.period)
    if args.dmax is not None:
        cfg["hyperparams"]["excitation"]["d_max"] = int(args.dmax)
        cfg["simulate"]["excitation"]["d_max"] = int(args.dmax)
    if isinstance(cfg.get("split"), (list, tuple)):
        cfg["split"] = ",".join(str(int(v)) for v in cfg["split"])
    return cfg


def _snapshot(out: Path, command: str, cfg: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_json({"command": command, "tool_version": __version__, "backend": _accel.BACKEND,
                "seed": cfg["seed"], "config": cfg}, out / "config.resolved.json")


def _series(args, cfg) -> CountSeries:
    if not args.input:
        raise CliError("missing_input", "--input <csv> is required", exit_code=2)
    return load_counts(args.input)


def _split(cfg, T: int) -> SplitSpec | None:
    if not cfg.get("split"):
        return None
    spec = SplitSpec.parse(cfg["split"])
    spec.validate(T)
    return spec


def _hyper(cfg) -> KernelHyperparams:
    return KernelHyperparams.from_dict(cfg["hyperparams"])


def _map_cfg(cfg) -> MapConfig:
    return MapConfig(**cfg.get("map", {}))


def _grid(cfg) -> CvGrid:
    return CvGrid(**cfg["grid"]) if cfg.get("grid") else CvGrid()


def _excitation_spec(d: dict) -> ExcitationFamilySpec:
    family = d.get("family", "geometric")
    params = dict(d.get("params", {}))
    if family == "geometric-bench":
        # benchmark convention: (1 - p)^d p, the r = 1 negative binomial
        family = "negative_binomial"
        params = {"alpha": params.get("alpha", 1.0), "r": 1.0, "p": params["p"]}
    return ExcitationFamilySpec(family, params, int(d.get("d_max", 365)))


def _fit_range(cfg, series: CountSeries):
    split = _split(cfg, len(series))
    if split is None:
        return len(series), None
    train, valid, test = split_series(series, split)
    if cfg.get("fit_on", "train+valid") == "train":
        return train.stop, split
    return valid.stop, split


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, cfg, out: Path) -> dict:
    sim = cfg["simulate"]
    T = int(args.T if getattr(args, "T", None) else sim["T"])
    base = BaselineFamilySpec(**sim["baseline"])
    exc = _excitation_spec(sim["excitation"])
    res = simulate_dhp(base, exc, SimConfig(T, cfg["seed"], exc.d_max))
    save_counts(res.series, out / "counts.csv")
    write_json({**res.metadata, "excitation_kernel": res.kernel}, out / "simulation.json")
    write_columns(out / "truth_baseline.csv", {"t": np.arange(1, T + 1), "mu": res.baseline})
    write_columns(out / "truth_excitation.csv", {"d": np.arange(1, exc.d_max + 1), "f": res.kernel})
    return {"T": T, "total_events": int(res.series.counts.sum()), "kernel_mass": res.metadata["kernel_mass"]}


def _fit_latent(series: CountSeries, cfg, stop: int):
    hp = _hyper(cfg)
    mcfg = _map_cfg(cfg)
    counts = series.as_float()[:stop]
    K = CollapsedKernelOperator(counts, hp, M=mcfg.ski_points, dense=mcfg.solver == "dense")
    fit = fit_map(counts, K.hp, mcfg, K=K)
    return K, fit, mcfg


def cmd_fit(args, cfg, out: Path) -> dict:
    series = _series(args, cfg)
    stop, _ = _fit_range(cfg, series)
    K, fit, mcfg = _fit_latent(series, cfg, stop)
    doc = {"hyperparams": K.hp.to_dict(), "map": mcfg.to_dict(), "T_fit": stop, "fit": fit.to_dict()}
    write_json(doc, out / "fit.json")
    return {"converged": fit.converged, "iterations": fit.iterations, "objective": fit.objective_trace[-1]}


def cmd_decompose(args, cfg, out: Path) -> dict:
    series = _series(args, cfg)
    if args.fit:
        doc = json.loads(Path(args.fit).read_text(encoding="utf-8"))
        cfg["hyperparams"] = doc["hyperparams"]
        stop = int(doc["T_fit"])
        hp = KernelHyperparams.from_dict(doc["hyperparams"])
        mcfg = MapConfig(**doc.get("map", {}))
        counts = series.as_float()[:stop]
        K = CollapsedKernelOperator(counts, hp, M=mcfg.ski_points, dense=mcfg.solver == "dense")
        fit = LatentFit.from_dict(doc["fit"])
    else:
        stop, _ = _fit_range(cfg, series)
        K, fit, mcfg = _fit_latent(series, cfg, stop)
        counts = series.as_float()[:stop]
    dec = project_components(fit.ell_star, K, alpha=fit.alpha)
    n = int(cfg["laplace"].get("n_samples", 1000))
    bands = laplace_bands(fit, counts, K, n_samples=n, seed=cfg["seed"], floor=mcfg.likelihood_floor) if n > 0 else None
    doc = {"decomposition": dec.to_dict(), "hyperparams": K.hp.to_dict()}
    if bands is not None:
        doc["bands"] = bands.to_dict()
    write_json(doc, out / "decomposition.json")
    t = np.arange(1, stop + 1)
    d = np.arange(1, K.d_max + 1)
    bcols = {"t": t, "b_hat": dec.b_hat}
    fcols = {"d": d, "f_hat": dec.f_hat}
    if bands is not None:
        bcols.update(b_lower=bands.b_lower, b_upper=bands.b_upper)
        fcols.update(f_lower=bands.f_lower, f_upper=bands.f_upper)
    write_columns(out / "baseline.csv", bcols)
    write_columns(out / "excitation.csv", fcols)
    return {"kappa_hat": dec.kappa_hat, "residual": dec.residual}


def _fit_model(model: str, counts, cfg):
    if model == "gpdhp":
        return fit_gpdhp(counts, _hyper(cfg), _map_cfg(cfg))
    hp = cfg["hyperparams"]
    d_max = hp["excitation"].get("d_max")
    return fit_parametric_mle(counts, normalize_form(model), period=hp["baseline"]["period"], d_max=d_max,
                              n_starts=int(cfg["bench"].get("n_starts", 8)), seed=cfg["seed"])


def _score_range(split: SplitSpec):
    if split.test_end > split.valid_end:
        return (split.valid_end, split.test_end), "test"
    return (split.train_end, split.valid_end), "valid"


def cmd_eval(args, cfg, out: Path) -> dict:
    series = _series(args, cfg)
    split = _split(cfg, len(series))
    if split is None:
        raise CliError("missing_split", "eval needs --split train_end,valid_end,test_end", exit_code=2)
    model_name = cfg["model"]
    if model_name not in MODELS:
        raise CliError("unknown_model", f"unknown model {model_name!r}", {"choices": list(MODELS)}, 2)
    rng, name = _score_range(split)
    stop = split.train_end if (cfg.get("fit_on") == "train" or name == "valid") else split.valid_end
    model = _fit_model(model_name, series.counts[:stop], cfg)
    rep = predictive_loglik(model, series, rng, name)
    doc = rep.to_dict()
    doc["fit_range"] = [1, stop]
    write_json(doc, out / "eval_report.json")
    return {"model": rep.model, "pll": rep.total}


def cmd_cv(args, cfg, out: Path) -> dict:
    series = _series(args, cfg)
    split = _split(cfg, len(series))
    if split is None:
        raise CliError("missing_split", "cv needs --split train_end,valid_end,test_end", exit_code=2)
    res = cv_grid_search(series, split, _grid(cfg), _map_cfg(cfg), _hyper(cfg), n_jobs=int(cfg.get("n_jobs", 1)))
    cols = ["cell", *CvGrid.axes(), "valid_pll", "kappa_hat", "converged", "status"]
    lines = [",".join(cols)]
    for row in res.table:
        lines.append(",".join(_csv_cell(row[c]) for c in cols))
    (out / "grid_table.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_json({**res.to_dict(), "grid": _grid(cfg).to_dict()}, out / "best_config.json")
    return {"best_index": res.best_index, "best_score": res.best_score}


def _csv_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, str):
        return '"' + v.replace('"', "'") + '"'
    return repr(float(v)) if isinstance(v, float) else str(v)


def cmd_bench(args, cfg, out: Path) -> dict:
    series = _series(args, cfg)
    split = _split(cfg, len(series))
    if split is None:
        raise CliError("missing_split", "bench needs --split train_end,valid_end,test_end", exit_code=2)
    rng, name = _score_range(split)
    stop = split.train_end if (cfg.get("fit_on") == "train" or name == "valid") else split.valid_end
    rows = []
    reports = {}
    for form in ("const", "linear", "sin", "linsin"):
        model = _fit_model(form, series.counts[:stop], cfg)
        rep = predictive_loglik(model, series, rng, name)
        rows.append({"model": rep.model, "pll": rep.total, "kappa_hat": rep.kappa_hat})
        reports[form] = rep.to_dict()
    gp_cfg = cfg
    if cfg["bench"].get("cv"):
        cv = cv_grid_search(series, split, _grid(cfg), _map_cfg(cfg), _hyper(cfg), n_jobs=int(cfg.get("n_jobs", 1)))
        gp_cfg = copy.deepcopy(cfg)
        gp_cfg["hyperparams"] = cv.best.to_dict()
        reports["cv"] = cv.to_dict()
    gp = _fit_model("gpdhp", series.counts[:stop], gp_cfg)
    rep = predictive_loglik(gp, series, rng, name)
    rows.append({"model": rep.model, "pll": rep.total, "kappa_hat": rep.kappa_hat})
    reports["gpdhp"] = rep.to_dict()
    table = ["model,pll,kappa_hat"] + [f"{r['model']},{r['pll']:.1f},{r['kappa_hat']:.3f}" for r in rows]
    (out / "comparison_table.csv").write_text("\n".join(table) + "\n", encoding="utf-8")
    write_json({"split": name, "fit_range": [1, stop], "rows": rows, "reports": reports}, out / "bench.json")
    return {"rows": rows}


EXCITATION_SCENARIOS = [
    ("nb_0.6_0.6_2", "negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 2}),
    ("nb_0.6_0.6_4", "negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 4}),
    ("nb_0.6_0.6_6", "negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 6}),
    ("geom_0.8_0.3", "geometric", {"alpha": 0.8, "p": 0.3}),
    ("geom_0.8_0.6", "geometric", {"alpha": 0.8, "p": 0.6}),
    ("geom_0.8_0.9", "geometric", {"alpha": 0.8, "p": 0.9}),
    ("power_20_2_4", "power_law", {"alpha": 20, "gamma": 2, "beta_pl": 4}),
    ("power_100_4_4", "power_law", {"alpha": 100, "gamma": 4, "beta_pl": 4}),
    ("power_600_8_4", "power_law", {"alpha": 600, "gamma": 8, "beta_pl": 4}),
    ("bimodal_0.8_1_6_1", "bimodal_gaussian", {"alpha": 0.8, "mu1": 1, "mu2": 6, "sigma": 1}),
    ("bimodal_0.8_1_8_1", "bimodal_gaussian", {"alpha": 0.8, "mu1": 1, "mu2": 8, "sigma": 1}),
    ("bimodal_0.8_1_10_1", "bimodal_gaussian", {"alpha": 0.8, "mu1": 1, "mu2": 10, "sigma": 1}),
]
SHARED_BASELINE = {"a": 1.0, "b": 1e-4, "c": 0.3, "d": 0.2, "period": 52.0}
SHARED_EXCITATION = ("negative_binomial", {"alpha": 0.6, "p": 0.6, "r": 2})
BASELINE_SCENARIOS = {
    "constant": {"a": 2.0},
    "linear": {"a": 1.0, "b": 5e-4},
    "linear_periodic": {"a": 1.0, "b": 5e-4, "c": 0.8, "period": 52.0},
}


def _figure_bundle(out: Path, name: str, base: BaselineFamilySpec, exc: ExcitationFamilySpec,
                   T: int, seed: int, cfg, fit: bool, n_train: int) -> dict:
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    res = simulate_dhp(base, exc, SimConfig(T, seed, exc.d_max))
    save_counts(res.series, d / "counts.csv")
    write_json(res.metadata, d / "simulation.json")
    write_columns(d / "truth_baseline.csv", {"t": np.arange(1, T + 1), "mu": res.baseline})
    lags = np.arange(1, exc.d_max + 1)
    cols = {"d": lags, "f_true": res.kernel}
    info = {"kernel_mass": res.metadata["kernel_mass"]}
    if fit:
        split = SplitSpec(n_train, T, T)
        cv = cv_grid_search(res.series, split, _grid(cfg), _map_cfg(cfg), _hyper(cfg), n_jobs=int(cfg.get("n_jobs", 1)))
        model = fit_gpdhp(res.series.counts[:n_train], cv.best, _map_cfg(cfg))
        f = np.zeros(exc.d_max)
        m = min(exc.d_max, model.f_hat.shape[0])
        f[:m] = model.f_hat[:m]
        cols["f_hat"] = f
        write_columns(d / "fitted_baseline.csv", {"t": np.arange(1, n_train + 1), "b_hat": model.decomposition.b_hat})
        write_json({"best": cv.best.to_dict(), "kappa_hat": model.kappa_hat}, d / "fit.json")
        info["kappa_hat"] = model.kappa_hat
    write_columns(d / "excitation.csv", cols)
    return info


def cmd_figures(args, cfg, out: Path) -> dict:
    T = int(args.T) if getattr(args, "T", None) else 6000
    n_train = int(round(T * 2 / 3))
    seed = cfg["seed"]
    d_max = cfg["hyperparams"]["excitation"].get("d_max") or 60
    summary = {"intensity_path": _intensity_path(out / "intensity_path")}
    for i, (name, fam, params) in enumerate(EXCITATION_SCENARIOS):
        exc = ExcitationFamilySpec(fam, params, d_max)
        base = BaselineFamilySpec(**SHARED_BASELINE)
        summary[f"excitation_recovery/{name}"] = _figure_bundle(
            out / "excitation_recovery", name, base, exc, T, seed + i, cfg, args.fit, n_train)
    fam, params = SHARED_EXCITATION
    for i, (name, b) in enumerate(BASELINE_SCENARIOS.items()):
        exc = ExcitationFamilySpec(fam, params, d_max)
        summary[f"baseline_recovery/{name}"] = _figure_bundle(
            out / "baseline_recovery", name, BaselineFamilySpec(**b), exc, T, seed + 100 + i, cfg, args.fit, n_train)
    write_json(summary, out / "figures.json")
    return {"bundles": len(summary)}


def _intensity_path(d: Path) -> dict:
    """Intensity path on [0, 20]: mu = 0.5, phi(d) = 0.75 * 0.5^(d-1), events 2@3, 4@7, 3@10."""
    d.mkdir(parents=True, exist_ok=True)
    mu, jump, decay = 0.5, 0.75, 0.5
    events = {3: 2, 7: 4, 10: 3}
    t = np.arange(0, 21)
    lam = np.full(t.shape, mu)
    for s, n in events.items():
        lag = t - s
        lam += np.where(lag >= 1, n * jump * decay ** (lag - 1.0), 0.0)
    counts = np.array([events.get(int(x), 0) for x in t])
    write_columns(d / "intensity.csv", {"t": t, "intensity": lam, "baseline": np.full(t.shape, mu), "events": counts})
    return {"reading": "phi(1) = K (jump size), phi(d) = K * beta^(d-1)"}


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
    "cv": cmd_cv,
    "bench": cmd_bench,
    "figures": cmd_figures,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpdhp", description="Gaussian-process discrete Hawkes processes")
    parser.add_argument("--version", action="version", version=f"gpdhp {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", help="count series CSV (t,count or count)")
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", default="gpdhp-out", help="output directory")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--split", help="train_end,valid_end,test_end (1-based, inclusive)")
    common.add_argument("--model", choices=MODELS)
    common.add_argument("--period", type=float)
    common.add_argument("--dmax", type=int)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("simulate", "figures"):
            p.add_argument("--T", type=int, help="series length")
        if name == "decompose":
            p.add_argument("--fit", help="fit.json from a previous 'fit' run")
        if name == "figures":
            p.add_argument("--fit", action="store_true", help="also run CV and fit GP-DHP per bundle")
    return parser


def _error_doc(code: str, message: str, context: dict) -> dict:
    return {"code": code, "message": message, "context": context}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code not in (0, None):
            sys.stderr.write(json.dumps(_error_doc("usage", "invalid command line", {"argv": list(sys.argv[1:] if argv is None else argv)})) + "\n")
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    try:
        cfg = resolve_config(args)
        _snapshot(out, args.command, cfg)
        summary = HANDLERS[args.command](args, cfg, out)
        _snapshot(out, args.command, cfg)
        sys.stdout.write(json.dumps({"command": args.command, "out": str(out), **summary}, default=_plain) + "\n")
        return 0
    except CliError as exc:
        doc = _error_doc(exc.code, str(exc), exc.context)
        code = exc.exit_code
    except OSError as exc:
        doc = _error_doc("io_error", str(exc), {"command": args.command, "path": getattr(exc, "filename", None)})
        code = 3
    except (SeriesError, ValueError) as exc:
        ctx = {"command": args.command, "type": type(exc).__name__}
        if isinstance(exc, SeriesError):
            ctx.update(path=args.input, row=exc.row)
        doc = _error_doc("invalid_input", str(exc), ctx)
        code = 3
    except SimulationError as exc:
        doc = _error_doc("simulation_failed", str(exc), {"t": exc.t})
        code = 4
    except Exception as exc:  # anything else still yields a machine-readable error
        doc = _error_doc("internal_error", str(exc), {"command": args.command, "type": type(exc).__name__})
        code = 1
    sys.stderr.write(json.dumps(doc) + "\n")
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_json(doc, out / "error.json")
    except OSError:
        pass
    return code


def _plain(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
