"""Shape functional and its volume-form shape derivative on P1 meshes.

For ``J(Omega) = int_Omega j(x, u, grad u)`` constrained by the semilinear
state equation, the derivative in direction ``V`` is::

    J'[V] = int j div V + j_x . V - j_z . DV^T grad u
          + int (DV + DV^T - div V I) grad u . grad p - g(u) p div V + div(f V) p

with ``div(f V) = grad f . V + f div V``.  It is assembled against the P1
vertex basis, so ``J'[V] = sum_a dual[a] . V[a]`` for every P1 field ``V``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pde
from .mesh import MeshError, TriMesh, _barycentric_gradients, deform
from .pde import MIDEDGE, PdeSolution, at_quadrature, quadrature_points
from .problem import ProblemSpec

__all__ = [
    "ShapeGradientAssembly",
    "FiniteDifferenceReport",
    "evaluate_J",
    "assemble_shape_gradient",
    "finite_difference_check",
]


@dataclass(frozen=True)
class ShapeGradientAssembly:
    dual_vector: np.ndarray  # (n_v, 2)
    J_value: float

    def pair(self, V: np.ndarray) -> float:
        """``J'(Omega)[V]`` for a P1 vertex field ``V``."""
        return float(np.sum(self.dual_vector * V))


def evaluate_J(mesh: TriMesh, spec: ProblemSpec, u: np.ndarray) -> float:
    x = quadrature_points(mesh)
    uq = at_quadrature(mesh, u)
    z = _grad(mesh, u)
    jq = spec.j(x, uq, np.repeat(z[:, None, :], 3, axis=1))
    return float(np.sum(mesh.areas * np.sum(jq, axis=1)) / 3.0)


def _grad(mesh: TriMesh, nodal: np.ndarray) -> np.ndarray:
    g = _barycentric_gradients(mesh.vertices, mesh.triangles)
    return np.einsum("ta,tai->ti", nodal[mesh.triangles], g)


def assemble_shape_gradient(
    mesh: TriMesh, spec: ProblemSpec, sol: PdeSolution
) -> ShapeGradientAssembly:
    u, p = sol.u, sol.p
    G = _barycentric_gradients(mesh.vertices, mesh.triangles)  # (nt, 3, 2): grad lambda_a
    du = np.einsum("ta,tai->ti", u[mesh.triangles], G)
    dp = np.einsum("ta,tai->ti", p[mesh.triangles], G)

    x = quadrature_points(mesh)
    uq = at_quadrature(mesh, u)
    pq = at_quadrature(mesh, p)
    zq = np.repeat(du[:, None, :], 3, axis=1)
    w = mesh.areas[:, None] / 3.0

    jq = spec.j(x, uq, zq)
    jx = spec.j_x(x, uq, zq)
    jz = spec.j_z(x, uq, zq)
    fq = spec.f(x)
    dfq = spec.grad_f(x)
    gq = spec.g(uq)

    # Basis field V = lambda_a e_k: DV = e_k (x) grad lambda_a, div V = d_k lambda_a.
    # Terms multiplying div V (scalar per quadrature point):
    s_div = jq - gq * pq + fq * pq  # j, -g(u) p, f p
    c_div = np.sum(w * s_div, axis=1)  # (nt,)
    # Terms multiplying V = lambda_a(q) e_k:
    vec = jx + dfq * pq[..., None]  # (nt, 3, 2)
    c_val = np.einsum("tq,tqk,qa->tak", w, vec, MIDEDGE)
    # -j_z . DV^T grad u = -(j_z . grad lambda_a) d_k u
    jz_bar = np.einsum("tq,tqi->ti", w, jz)
    # (DV + DV^T - div V I) grad u . grad p
    #   = d_k p (grad lambda_a . grad u) + d_k u (grad lambda_a . grad p) - d_k lambda_a (grad u . grad p)
    area = mesh.areas
    gu = np.einsum("tai,ti->ta", G, du)
    gp = np.einsum("tai,ti->ta", G, dp)
    gjz = np.einsum("tai,ti->ta", G, jz_bar)
    updot = np.einsum("ti,ti->t", du, dp)

    local = (
        c_div[:, None, None] * G
        + c_val
        - gjz[:, :, None] * du[:, None, :]
        + area[:, None, None]
        * (
            gu[:, :, None] * dp[:, None, :]
            + gp[:, :, None] * du[:, None, :]
            - updot[:, None, None] * G
        )
    )
    dual = np.zeros((mesh.n_vertices, 2))
    for k in range(2):
        dual[:, k] = np.bincount(mesh.triangles.ravel(), local[:, :, k].ravel(), minlength=mesh.n_vertices)
    return ShapeGradientAssembly(dual, evaluate_J(mesh, spec, u))


@dataclass
class FiniteDifferenceReport:
    derivative: float
    steps: np.ndarray
    quotients: np.ndarray
    errors: np.ndarray
    slope: float

    def relative_error(self, t: float) -> float:
        i = int(np.argmin(np.abs(self.steps - t)))
        return float(self.errors[i] / max(abs(self.derivative), np.finfo(float).tiny))

    def table(self) -> str:
        rows = [f"{'t':>10} {'quotient':>16} {'error':>12}"]
        rows += [f"{t:10.1e} {q:16.9e} {e:12.3e}" for t, q, e in zip(self.steps, self.quotients, self.errors)]
        rows.append(f"J'[V] = {self.derivative:.9e}, log-log slope = {self.slope:.3f}")
        return "\n".join(rows)


def finite_difference_check(
    mesh: TriMesh,
    spec: ProblemSpec,
    V: np.ndarray,
    t_list=(1e-2, 1e-3, 1e-4),
    newton_tol: float = 1e-12,
) -> FiniteDifferenceReport:
    """Compare ``J'[V]`` with ``(J(Omega_t) - J(Omega)) / t`` for ``Omega_t = (id + tV)(Omega)``.

    Raises :class:`MeshError` if a trial deformation inverts an element.
    """
    sol = pde.solve(mesh, spec, newton_tol)
    grad = assemble_shape_gradient(mesh, spec, sol)
    dJ = grad.pair(V)
    J0 = grad.J_value
    steps = np.asarray(t_list, dtype=float)
    quotients = []
    for t in steps:
        moved = deform(mesh, V, t)
        u_t = pde.solve_state(moved, spec, newton_tol, u0=sol.u)
        quotients.append((evaluate_J(moved, spec, u_t) - J0) / t)
    quotients = np.array(quotients)
    errors = np.abs(quotients - dJ)
    ok = errors > 0
    if ok.sum() >= 2:
        slope = float(np.polyfit(np.log(steps[ok]), np.log(errors[ok]), 1)[0])
    else:
        slope = float("nan")
    return FiniteDifferenceReport(dJ, steps, quotients, errors, slope)
