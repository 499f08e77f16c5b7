"""Finite elements for box-constrained optimal control of the integral fractional Laplacian."""
from .mesh import GradingSpec, Mesh, MeshError, build_disc_mesh, build_lshape_mesh, read_mesh, write_mesh
from .assembly import (
    QuadratureSpec, StiffnessMatrix, assemble_coupling, assemble_load, assemble_mass, assemble_stiffness,
    normalization_constant, weight_omega_s,
)
from .solver import CholeskySolver, SolverError, StateField, solve
from .exact import DiscBenchmark, disc_benchmark, f_exact, proj_box, u_exact
from .control import (
    ControlField, FullyDiscreteOCP, OcpProblem, OcpSolution, OptimizationError, SemidiscreteControl,
    VariationalOCP, reduced_gradient, solve_fully_discrete, solve_variational,
)
from .errors import ConvergenceRecord, energy_error_state, eoc, l2_error

__version__ = "0.1.0"
