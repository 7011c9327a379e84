"""Shape optimization by steepest descent in the Lipschitz topology.

P1 finite elements for a semilinear Dirichlet problem, volume-form shape
gradients, W^{1,inf} steepest-descent directions and an Armijo line search.
"""

from .descent import ArmijoError, DescentState, run
from .direction import steepest_direction
from .geomdiag import circularity, hausdorff_complementary
from .linalg import ConvergenceError
from .mesh import EmbeddedDomain, MeshError, TriMesh, disk_mesh, holdall_square_domain
from .pde import solve, solve_state
from .problem import ProblemSpec, tracking_instance
from .shapecalc import assemble_shape_gradient, evaluate_J, finite_difference_check

__all__ = [
    "ArmijoError",
    "ConvergenceError",
    "DescentState",
    "EmbeddedDomain",
    "MeshError",
    "ProblemSpec",
    "TriMesh",
    "assemble_shape_gradient",
    "circularity",
    "disk_mesh",
    "evaluate_J",
    "finite_difference_check",
    "hausdorff_complementary",
    "holdall_square_domain",
    "run",
    "solve",
    "solve_state",
    "steepest_direction",
    "tracking_instance",
]

__version__ = "0.1.0"
