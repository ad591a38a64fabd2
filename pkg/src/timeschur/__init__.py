"""Parallel-in-time multilevel Schur-complement solvers for ODE systems.

The linear path is a direct method: per-subdomain interior corrections and
harmonic extensions reduce the block-bidiagonal time system level by level,
the coarsest level is solved sequentially, and reconstruction is exact. Two
nonlinear strategies wrap it: a global Newton/Picard loop with the direct
solver per iteration, and a nonlinear Schur loop on a chosen level's
interface values with nonlinear harmonic extensions. A benchmark CLI
(``timeschur``) runs weak-scaling experiments at desk scale.
"""

from .errors import (
    NonconvergenceError,
    SingularStepError,
    TaskError,
    TimeSchurError,
    ValidationError,
)
from .integrators import (
    AffinePropagator,
    Scheme,
    condense_dg_element,
    dg_element_system,
    linear_propagator,
    nonlinear_step_residual,
    parse_scheme,
)
from .nonlinear import (
    ExtensionResult,
    LinearizationPolicy,
    global_residual,
    linearize_global,
    newton_schur_solve,
    nonlinear_harmonic_extension,
    nonlinear_schur_newton_solve,
    sequential_nonlinear_solve,
)
from .partition import (
    MultilevelPartition,
    build_adaptive_top,
    build_explicit,
    build_uniform,
)
from .problems import (
    OdeProblem,
    by_name,
    cosine_drive,
    forced_riccati,
    linear_decay,
    lotka_volterra,
    random_stable_linear,
    zero_operator,
)
from .runtime import (
    CostEstimate,
    SolverReport,
    Timings,
    WorkerPool,
    available_workers,
    parallel_map,
)
from .schur import (
    LevelSystem,
    assemble_schur,
    build_linear_system,
    cost_model,
    extension_operator,
    interior_correction,
    ml_solve,
    petrov_galerkin_assemble,
    restriction_operator,
    sequential_solve,
)

__version__ = "0.1.0"

__all__ = [
    "AffinePropagator",
    "CostEstimate",
    "ExtensionResult",
    "LevelSystem",
    "LinearizationPolicy",
    "MultilevelPartition",
    "NonconvergenceError",
    "OdeProblem",
    "Scheme",
    "SingularStepError",
    "SolverReport",
    "TaskError",
    "TimeSchurError",
    "Timings",
    "ValidationError",
    "WorkerPool",
    "assemble_schur",
    "available_workers",
    "build_adaptive_top",
    "build_explicit",
    "build_linear_system",
    "build_uniform",
    "by_name",
    "condense_dg_element",
    "cosine_drive",
    "cost_model",
    "dg_element_system",
    "extension_operator",
    "forced_riccati",
    "global_residual",
    "interior_correction",
    "linear_decay",
    "linear_propagator",
    "linearize_global",
    "lotka_volterra",
    "ml_solve",
    "newton_schur_solve",
    "nonlinear_harmonic_extension",
    "nonlinear_schur_newton_solve",
    "nonlinear_step_residual",
    "parallel_map",
    "parse_scheme",
    "petrov_galerkin_assemble",
    "random_stable_linear",
    "restriction_operator",
    "sequential_nonlinear_solve",
    "sequential_solve",
    "zero_operator",
]
