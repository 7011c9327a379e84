"""P1 finite elements for the semilinear state equation and its adjoint.

All nonlinear and weighted terms use the three-point mid-edge rule, which is
exact for quadratics.  The same rule is used by :mod:`lipshape.shapecalc`, so
the assembled shape gradient is the exact derivative of the discrete
functional with respect to vertex positions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .linalg import ConvergenceError, SparseMatrix, apply_dirichlet, cg_solve, from_coo
from .mesh import TriMesh, _barycentric_gradients, tensor_mesh
from .problem import ProblemSpec

log = logging.getLogger(__name__)

__all__ = [
    "PdeSolution",
    "NewtonError",
    "AprioriBoundError",
    "MIDEDGE",
    "quadrature_points",
    "at_quadrature",
    "assemble_stiffness",
    "assemble_mass_weighted",
    "assemble_load",
    "assemble_flux_load",
    "state_residual",
    "solve_state",
    "solve_adjoint",
    "solve",
    "apriori_bound",
    "l2_error",
]

#: barycentric coordinates of the edge midpoints (01, 12, 20)
MIDEDGE = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])

DEFAULT_NEWTON_TOL = 1e-10
MAX_NEWTON = 50


class NewtonError(ConvergenceError):
    pass


class AprioriBoundError(RuntimeError):
    pass


@dataclass
class PdeSolution:
    u: np.ndarray
    p: np.ndarray
    newton_iterations: int = 0
    residual_norms: list = field(default_factory=list)


def quadrature_points(mesh: TriMesh) -> np.ndarray:
    """Mid-edge points, shape (n_t, 3, 2)."""
    return np.einsum("qa,tai->tqi", MIDEDGE, mesh.vertices[mesh.triangles])


def at_quadrature(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    """Values of a P1 function at the mid-edge points, shape (n_t, 3)."""
    return nodal[mesh.triangles] @ MIDEDGE.T


def _weights(mesh: TriMesh) -> np.ndarray:
    return np.repeat(mesh.areas[:, None] / 3.0, 3, axis=1)


def assemble_stiffness(mesh: TriMesh) -> SparseMatrix:
    g = _barycentric_gradients(mesh.vertices, mesh.triangles)
    local = mesh.areas[:, None, None] * np.einsum("tai,tbi->tab", g, g)
    return _assemble_local(mesh, local)


def assemble_mass_weighted(mesh: TriMesh, weight=1.0) -> SparseMatrix:
    """``int w phi_a phi_b``; ``weight`` is a scalar, a nodal vector or (n_t, 3) quadrature values."""
    w = _quadrature_values(mesh, weight)
    local = np.einsum("tq,qa,qb->tab", w * _weights(mesh), MIDEDGE, MIDEDGE)
    return _assemble_local(mesh, local)


def assemble_load(mesh: TriMesh, integrand) -> np.ndarray:
    """``int F phi_a``; ``integrand`` is a callable of position, a scalar or quadrature values."""
    if callable(integrand):
        integrand = integrand(quadrature_points(mesh))
    F = _quadrature_values(mesh, integrand)
    local = (F * _weights(mesh)) @ MIDEDGE
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)


def assemble_flux_load(mesh: TriMesh, flux: np.ndarray) -> np.ndarray:
    """``int Z . grad phi_a`` for a vector field given at quadrature points (n_t, 3, 2)."""
    g = _barycentric_gradients(mesh.vertices, mesh.triangles)
    zbar = np.einsum("tqi,tq->ti", flux, _weights(mesh))
    local = np.einsum("ti,tai->ta", zbar, g)
    return np.bincount(mesh.triangles.ravel(), local.ravel(), minlength=mesh.n_vertices)


def _quadrature_values(mesh: TriMesh, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 0:
        return np.full((mesh.n_triangles, 3), float(values))
    if values.shape == (mesh.n_vertices,):
        return at_quadrature(mesh, values)
    if values.shape == (mesh.n_triangles, 3):
        return values
    raise ValueError(f"cannot interpret values of shape {values.shape} on this mesh")


def _assemble_local(mesh: TriMesh, local: np.ndarray) -> SparseMatrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1)
    cols = np.tile(t, (1, 3))
    return from_coo(mesh.n_vertices, rows, cols, local.reshape(len(t), 9))


# --------------------------------------------------------------------------
# state and adjoint


class _StateSystem:
    """Cached pieces of ``F(u) = K u + N(u) - b`` on one mesh."""

    def __init__(self, mesh: TriMesh, spec: ProblemSpec):
        self.mesh = mesh
        self.spec = spec
        self.K = assemble_stiffness(mesh)
        self.b = assemble_load(mesh, spec.f)
        self.fixed = mesh.boundary_vertices
        self.free = np.ones(mesh.n_vertices, dtype=bool)
        self.free[self.fixed] = False

    def residual(self, u: np.ndarray) -> np.ndarray:
        F = self.K.matvec(u) + assemble_load(self.mesh, self.spec.g(at_quadrature(self.mesh, u))) - self.b
        F[self.fixed] = 0.0
        return F

    def jacobian(self, u: np.ndarray) -> SparseMatrix:
        return self.K + assemble_mass_weighted(self.mesh, self.spec.dg(at_quadrature(self.mesh, u)))


def state_residual(mesh: TriMesh, spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    """Algebraic residual of the discrete state equation (zero on boundary rows)."""
    return _StateSystem(mesh, spec).residual(u)


def solve_state(
    mesh: TriMesh,
    spec: ProblemSpec,
    newton_tol: float = DEFAULT_NEWTON_TOL,
    u0: np.ndarray | None = None,
    cg_tol: float = 1e-12,
    full_output: bool = False,
):
    """Damped Newton for the discrete state equation, ``u = 0`` on the boundary.

    With ``full_output`` returns ``(u, iterations, residual_history)``.
    """
    system = _StateSystem(mesh, spec)
    u = np.zeros(mesh.n_vertices) if u0 is None else np.array(u0, dtype=float)
    u[system.fixed] = 0.0
    F = system.residual(u)
    history = [float(np.linalg.norm(F))]
    it = 0
    while history[-1] > newton_tol:
        if it >= MAX_NEWTON:
            raise NewtonError("Newton did not converge", history[-1], it)
        A, rhs = apply_dirichlet(system.jacobian(u), -F, system.fixed)
        du = cg_solve(A, rhs, tol=cg_tol)
        step = 1.0
        for _ in range(40):
            trial = u + step * du
            F_trial = system.residual(trial)
            r = float(np.linalg.norm(F_trial))
            if r < history[-1]:
                break
            step *= 0.5
        else:
            raise NewtonError("Newton line search stalled", history[-1], it)
        u, F = trial, F_trial
        history.append(r)
        it += 1
    if full_output:
        return u, it, history
    return u


def adjoint_rhs(mesh: TriMesh, spec: ProblemSpec, u: np.ndarray) -> np.ndarray:
    x = quadrature_points(mesh)
    uq = at_quadrature(mesh, u)
    z = _grad_at_quadrature(mesh, u)
    return assemble_load(mesh, spec.j_u(x, uq, z)) + assemble_flux_load(mesh, spec.j_z(x, uq, z))


def solve_adjoint(
    mesh: TriMesh, spec: ProblemSpec, u: np.ndarray, cg_tol: float = 1e-12
) -> np.ndarray:
    """One SPD solve of ``(K + M[g'(u)]) p = int j_u phi + j_z . grad phi``."""
    system = _StateSystem(mesh, spec)
    A, rhs = apply_dirichlet(system.jacobian(u), adjoint_rhs(mesh, spec, u), system.fixed)
    p = cg_solve(A, rhs, tol=cg_tol)
    p[system.fixed] = 0.0
    return p


def solve(
    mesh: TriMesh,
    spec: ProblemSpec,
    newton_tol: float = DEFAULT_NEWTON_TOL,
    u0: np.ndarray | None = None,
    sup_bound: float | None = None,
) -> PdeSolution:
    """State and adjoint on ``mesh``; checks ``max|u| <= 2 sup_bound`` when given."""
    u, it, hist = solve_state(mesh, spec, newton_tol, u0=u0, full_output=True)
    if sup_bound is not None:
        umax = float(np.max(np.abs(u))) if len(u) else 0.0
        log.debug("max|u_h| = %.4g, a priori bound 2K = %.4g", umax, 2 * sup_bound)
        if umax > 2 * sup_bound:
            raise AprioriBoundError(f"max|u_h| = {umax:.4g} exceeds a priori bound {2 * sup_bound:.4g}")
    p = solve_adjoint(mesh, spec, u)
    return PdeSolution(u, p, it, hist)


def _grad_at_quadrature(mesh: TriMesh, u: np.ndarray) -> np.ndarray:
    g = _barycentric_gradients(mesh.vertices, mesh.triangles)
    grad = np.einsum("ta,tai->ti", u[mesh.triangles], g)
    return np.repeat(grad[:, None, :], 3, axis=1)


@lru_cache(maxsize=8)
def _apriori_bound_cached(spec: ProblemSpec, n: int) -> float:
    hd = spec.holdall
    mesh = tensor_mesh(np.linspace(hd.xmin, hd.xmax, n + 1), np.linspace(hd.ymin, hd.ymax, n + 1), hd)
    g0 = float(spec.g(np.zeros(1))[0])
    K = assemble_stiffness(mesh)
    b = assemble_load(mesh, lambda x: np.abs(spec.f(x) - g0))
    A, rhs = apply_dirichlet(K, b, mesh.boundary_vertices)
    return float(np.max(cg_solve(A, rhs)))


def apriori_bound(spec: ProblemSpec, n: int = 64) -> float:
    """Sup of ``w`` solving ``-Lap w = |f - g(0)|`` on ``D`` with ``w = 0`` on ``dD``.

    Monotonicity of ``g`` and comparison give ``|u| <= w`` for the state on
    any ``Omega`` inside ``D``.
    """
    return _apriori_bound_cached(spec, n)


# degree-5, 7-point rule (Dunavant) for error norms
_D7_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [0.059715871789770, 0.470142064105115, 0.470142064105115],
        [0.470142064105115, 0.059715871789770, 0.470142064105115],
        [0.470142064105115, 0.470142064105115, 0.059715871789770],
        [0.797426985353087, 0.101286507323456, 0.101286507323456],
        [0.101286507323456, 0.797426985353087, 0.101286507323456],
        [0.101286507323456, 0.101286507323456, 0.797426985353087],
    ]
)
_D7_W = np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3])


def l2_error(mesh: TriMesh, u_h: np.ndarray, exact) -> float:
    """``||u_h - exact||_{L^2}`` over the mesh with a degree-5 rule."""
    x = np.einsum("qa,tai->tqi", _D7_BARY, mesh.vertices[mesh.triangles])
    uq = u_h[mesh.triangles] @ _D7_BARY.T
    err = (uq - exact(x)) ** 2
    return float(np.sqrt(np.sum(mesh.areas * (err @ _D7_W))))
