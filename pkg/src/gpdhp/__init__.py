"""Gaussian-process discrete Hawkes processes.

Near-linear-time MAP inference over a collapsed latent intensity, closed-form
decomposition into baseline and excitation, Laplace uncertainty bands,
simulation, parametric benchmarks and predictive evaluation for discrete-time
self-exciting count series.
"""

__version__ = "0.1.0"

from ._accel import BACKEND
from .decompose import Decomposition, LaplaceBands, branching_ratio, laplace_bands, project_components
from .evaluation import CvGrid, EvalReport, GpDhpModel, cv_grid_search, fit_gpdhp, predictive_loglik
from .inference import LatentFit, MapConfig, fit_map, map_gradient, map_objective
from .kernels import BaselineKernelParams, ExcitationKernelParams, KernelHyperparams
from .linops import CollapsedKernelOperator, LagDesignOperator, build_ski, cg_solve, collapsed_mvm
from .parametric import ParametricDhpSpec, fit_parametric_mle, parametric_intensity
from .series_io import CountSeries, SplitSpec, load_counts, save_counts, split_series
from .simulate import BaselineFamilySpec, ExcitationFamilySpec, SimConfig, simulate_dhp

__all__ = [
    "BACKEND",
    "BaselineFamilySpec",
    "BaselineKernelParams",
    "CollapsedKernelOperator",
    "CountSeries",
    "CvGrid",
    "Decomposition",
    "EvalReport",
    "ExcitationFamilySpec",
    "ExcitationKernelParams",
    "GpDhpModel",
    "KernelHyperparams",
    "LagDesignOperator",
    "LaplaceBands",
    "LatentFit",
    "MapConfig",
    "ParametricDhpSpec",
    "SimConfig",
    "SplitSpec",
    "branching_ratio",
    "build_ski",
    "cg_solve",
    "collapsed_mvm",
    "cv_grid_search",
    "fit_gpdhp",
    "fit_map",
    "fit_parametric_mle",
    "laplace_bands",
    "load_counts",
    "map_gradient",
    "map_objective",
    "parametric_intensity",
    "predictive_loglik",
    "project_components",
    "save_counts",
    "simulate_dhp",
    "split_series",
]
