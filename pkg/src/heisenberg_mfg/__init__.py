"""Numerical first-order mean field games on the Heisenberg group.

Modules: ``hgroup`` (group law, gauge geometry, pavage), ``coupling``
(kernels, convolution couplings, initial densities), ``control`` (single
player optimal control), ``hjb`` (semi-Lagrangian value function),
``transport`` (particle push-forward and SDE ensembles), ``measures``
(empirical measures and d1), ``equilibrium`` (fixed-point driver),
``config``, ``io``, ``verify`` and ``cli``.
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .control import (
    ControlPath,
    cost,
    direct_optimize,
    integrate_trajectory,
    pmp_rhs,
    pmp_shoot,
    synthesis_field,
)
from .coupling import (
    CouplingField,
    CouplingOperator,
    GaugeKernel,
    coupling_F,
    coupling_G,
    default_initial_density,
    h_convolve_measure,
    kernel_eval,
)
from .equilibrium import EquilibriumReport, certify_mild, solve_equilibrium
from .hgroup import (
    dilate,
    gauge_norm,
    group_inv,
    group_minus,
    group_mul,
    h_distance,
    pavage,
    torus_distance,
)
from .hjb import HJBConfig, ValueGrid, check_periodicity, solve_hjb
from .measures import EmpiricalMeasure, wasserstein1
from .transport import MeasureFlow, PathEnsemble, push_forward, sde_ensemble, weak_residual

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "ControlPath",
    "cost",
    "direct_optimize",
    "integrate_trajectory",
    "pmp_rhs",
    "pmp_shoot",
    "synthesis_field",
    "CouplingField",
    "CouplingOperator",
    "GaugeKernel",
    "coupling_F",
    "coupling_G",
    "default_initial_density",
    "h_convolve_measure",
    "kernel_eval",
    "EquilibriumReport",
    "certify_mild",
    "solve_equilibrium",
    "dilate",
    "gauge_norm",
    "group_inv",
    "group_minus",
    "group_mul",
    "h_distance",
    "pavage",
    "torus_distance",
    "HJBConfig",
    "ValueGrid",
    "check_periodicity",
    "solve_hjb",
    "EmpiricalMeasure",
    "wasserstein1",
    "MeasureFlow",
    "PathEnsemble",
    "push_forward",
    "sde_ensemble",
    "weak_residual",
]
