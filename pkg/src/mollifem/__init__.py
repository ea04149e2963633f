"""Finite element solver for nonlocal diffusion with mollified kernels."""

from .assembly import (
    AssemblyConfig,
    SparseMatrix,
    aprx_max_dist,
    aprx_min_dist,
    assemble,
    assemble_barycenter,
    assemble_rhs,
    neighbor_sets,
    pattern_halfwidth,
)
from .fe_space import FESpace, interpolate, l2_error, lifting
from .harness import (
    ExperimentConfig,
    ManufacturedSolution,
    ReportRow,
    compute_rate,
    emit_csv,
    render_csv,
    run_experiment,
    solution_catalog,
)
from .kernel import (
    KernelParams,
    gamma_eps,
    mollifier,
    scaling_c_delta,
    scaling_c_delta_eps,
    xi,
)
from .mesh import Mesh, PartitionMap, build_mesh, partition_geometric, refine
from .parallel import PartitionContext, ghost_regions, parallel_assemble
from .quadrature import QuadratureRule, gauss_legendre_1d, rule_for_kind
from .solver import SolveReport, solve

__version__ = "0.1.0"

__all__ = [
    "AssemblyConfig",
    "ExperimentConfig",
    "FESpace",
    "KernelParams",
    "ManufacturedSolution",
    "Mesh",
    "PartitionContext",
    "PartitionMap",
    "ReportRow",
    "SolveReport",
    "SparseMatrix",
    "aprx_max_dist",
    "aprx_min_dist",
    "assemble",
    "assemble_barycenter",
    "assemble_rhs",
    "QuadratureRule",
    "build_mesh",
    "compute_rate",
    "emit_csv",
    "gamma_eps",
    "gauss_legendre_1d",
    "ghost_regions",
    "interpolate",
    "l2_error",
    "lifting",
    "mollifier",
    "neighbor_sets",
    "parallel_assemble",
    "partition_geometric",
    "pattern_halfwidth",
    "refine",
    "render_csv",
    "rule_for_kind",
    "run_experiment",
    "scaling_c_delta",
    "scaling_c_delta_eps",
    "solution_catalog",
    "solve",
    "xi",
]
