"""Steepest-descent directions in the Lipschitz (W^{1,inf}) topology.

The direction minimizes ``J'[W]`` over P1 fields with ``|DW| <= 1`` per
element (spectral norm) that vanish at ``fixed`` vertices.  The constraint is
replaced by the strictly convex p-regularization::

    min_W  l . W + (1/p) sum_T |T| |DW_T|_F^p

solved by damped Newton with continuation in ``p`` (2 -> 4 -> ... -> p).
The minimizer is rescaled so that ``max_T |DW_T|_2 = 1``; since
``|A|_2 <= |A|_F`` this is feasible, and ``-J'[V]`` is a lower bound for the
discrete dual norm of ``J'``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .linalg import ConvergenceError, CsrPattern, cg_solve
from .mesh import TriMesh, _barycentric_gradients, element_gradients

log = logging.getLogger(__name__)

__all__ = [
    "DirectionResult",
    "DirectionError",
    "spectral_norm_2x2",
    "spectral_norms",
    "steepest_direction",
]

# relative floor on the isotropic Hessian weight |DW|^(p-2)
HESSIAN_FLOOR = 1e-6
# relative size of the final Newton step, and how many extra steps may be spent on it
STEP_TOL = 1e-9
MAX_POLISH = 3
# inner CG iterations per Newton step; the step is truncated beyond that
MAX_CG = 400


class DirectionError(ConvergenceError):
    pass


@dataclass
class DirectionResult:
    V: np.ndarray
    dual_norm_estimate: float
    p_used: int
    inner_iterations: int
    max_spectral_norm: float


def spectral_norm_2x2(A) -> float:
    """Largest singular value of a 2x2 matrix (closed form)."""
    return float(spectral_norms(np.asarray(A, dtype=float)[None])[0])


def spectral_norms(A: np.ndarray) -> np.ndarray:
    """Vectorized :func:`spectral_norm_2x2` over an array of shape (..., 2, 2).

    With ``A = [[a, b], [c, d]]`` the singular values are
    ``(sqrt((a+d)^2 + (c-b)^2) +- sqrt((a-d)^2 + (b+c)^2)) / 2``.
    """
    a, b = A[..., 0, 0], A[..., 0, 1]
    c, d = A[..., 1, 0], A[..., 1, 1]
    return 0.5 * (np.hypot(a + d, c - b) + np.hypot(a - d, b + c))


class _PFunctional:
    """``F(w) = l . w + (1/p) sum |T| |DW|_F^p`` on the free dofs of a mesh.

    Dofs are interleaved, ``w[2a + k] = W[a, k]``.
    """

    def __init__(self, mesh: TriMesh, ell: np.ndarray, fixed: np.ndarray):
        self.tri = mesh.triangles
        G = _barycentric_gradients(mesh.vertices, mesh.triangles)
        self.Gx, self.Gy = G[:, :, 0], G[:, :, 1]
        self.area = mesh.areas
        self.ell = ell.ravel()
        self.fixed_dofs = np.concatenate([2 * fixed, 2 * fixed + 1])
        self.free = np.ones(2 * mesh.n_vertices, dtype=bool)
        self.free[self.fixed_dofs] = False
        t = mesh.triangles
        self.dofs = np.stack([2 * t, 2 * t + 1], axis=2).reshape(len(t), 6)
        self.pattern = CsrPattern(2 * mesh.n_vertices, self.dofs)
        GG = self.Gx[:, :, None] * self.Gx[:, None, :] + self.Gy[:, :, None] * self.Gy[:, None, :]
        iso = np.zeros((len(t), 3, 2, 3, 2))
        iso[:, :, 0, :, 0] = GG
        iso[:, :, 1, :, 1] = GG
        self.iso = iso.reshape(len(t), 6, 6)

    def jacobians(self, w: np.ndarray) -> np.ndarray:
        """Per-element ``DW`` flattened as ``(d1 W1, d2 W1, d1 W2, d2 W2)``."""
        W = w.reshape(-1, 2)[self.tri]  # (nt, 3, 2)
        M = np.empty((len(W), 4))
        M[:, 0] = np.sum(W[:, :, 0] * self.Gx, axis=1)
        M[:, 1] = np.sum(W[:, :, 0] * self.Gy, axis=1)
        M[:, 2] = np.sum(W[:, :, 1] * self.Gx, axis=1)
        M[:, 3] = np.sum(W[:, :, 1] * self.Gy, axis=1)
        return M

    def _btm(self, M: np.ndarray) -> np.ndarray:
        """``B^T vec(DW)`` per element, shape (nt, 6)."""
        out = np.empty((len(M), 3, 2))
        out[:, :, 0] = M[:, 0, None] * self.Gx + M[:, 1, None] * self.Gy
        out[:, :, 1] = M[:, 2, None] * self.Gx + M[:, 3, None] * self.Gy
        return out.reshape(len(M), 6)

    def value(self, w: np.ndarray, p: float) -> float:
        M = self.jacobians(w)
        nrm2 = np.sum(M * M, axis=1)
        return float(self.ell @ w + np.sum(self.area * nrm2 ** (p / 2)) / p)

    def gradient(self, w: np.ndarray, p: float) -> np.ndarray:
        M = self.jacobians(w)
        nrm2 = np.sum(M * M, axis=1)
        c = self.area * nrm2 ** ((p - 2) / 2)
        local = c[:, None] * self._btm(M)
        g = np.bincount(self.dofs.ravel(), local.ravel(), minlength=len(w)) + self.ell
        g[~self.free] = 0.0
        return g

    def hessian(self, w: np.ndarray, p: float):
        """Newton matrix with Dirichlet rows eliminated.

        The isotropic weight ``|DW|^(p-2)`` is floored relative to its maximum
        so the matrix stays positive definite where ``DW`` vanishes.
        """
        M = self.jacobians(w)
        nrm2 = np.sum(M * M, axis=1)
        c1 = nrm2 ** ((p - 2) / 2)
        c1 = np.maximum(c1, HESSIAN_FLOOR * max(c1.max(), np.finfo(float).tiny))
        local = c1[:, None, None] * self.iso
        if p > 2:
            c2 = (p - 2) * nrm2 ** ((p - 4) / 2)
            b = self._btm(M)
            local += c2[:, None, None] * (b[:, :, None] * b[:, None, :])
        return self.pattern.assemble(self.area[:, None, None] * local, self.fixed_dofs)


def _optimal_scale(F: _PFunctional, w: np.ndarray, p: float) -> float:
    """Minimizer ``s > 0`` of ``F(s w)`` for a descent field ``w``."""
    M = F.jacobians(w)
    power = float(np.sum(F.area * np.sum(M * M, axis=1) ** (p / 2)))
    slope = -float(F.ell @ w)
    if slope <= 0 or power <= 0:
        return 0.0
    return (slope / power) ** (1.0 / (p - 1))


def _newton(F: _PFunctional, w: np.ndarray, p: float, tol: float, max_iter: int, step_tol: float = np.inf):
    """Damped Newton; converged once ``|grad| <= tol`` and the last step was tiny.

    The step test matters because the Hessian scales with element areas:
    a small gradient alone leaves ``w`` accurate to only about ``tol / h^2``.
    """
    g = F.gradient(w, p)
    gnorm = np.linalg.norm(g)
    val = F.value(w, p)
    last_step = np.inf
    polish = 0  # extra steps taken after the gradient test passed
    for it in range(max_iter):
        if gnorm <= tol:
            if last_step <= step_tol * np.max(np.abs(w)) or polish >= MAX_POLISH:
                return w, it, True
            polish += 1
        H, rhs = F.hessian(w, p), -g
        dw = cg_solve(H, rhs, tol=min(1e-2, max(1e-12, 0.1 * gnorm)), max_iter=MAX_CG, truncate=True)
        slope = g @ dw
        if slope >= 0:
            dw, slope = -g, -(g @ g)
        step = 1.0
        while True:
            trial = w + step * dw
            tval = F.value(trial, p)
            if tval <= val + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-12:
                return w, it, gnorm <= tol
        last_step = step * np.max(np.abs(dw))
        w, val = trial, tval
        g = F.gradient(w, p)
        gnorm = np.linalg.norm(g)
    return w, max_iter, gnorm <= tol


def steepest_direction(
    mesh: TriMesh,
    grad,
    p: int = 8,
    inner_tol: float = 1e-8,
    fixed: np.ndarray | None = None,
    warm_start: np.ndarray | None = None,
    max_inner: int = 200,
) -> DirectionResult:
    """Approximate ``argmin { J'[W] : |DW| <= 1 per element, W = 0 on fixed vertices }``.

    ``grad`` is a :class:`~lipshape.shapecalc.ShapeGradientAssembly` or a
    dual vector of shape (n_v, 2).  ``fixed`` defaults to the vertices on the
    boundary of the mesh's hold-all rectangle.
    """
    if p < 2 or p % 2:
        raise ValueError("p must be an even integer >= 2")
    ell = np.asarray(getattr(grad, "dual_vector", grad), dtype=float)
    if ell.shape != (mesh.n_vertices, 2):
        raise ValueError("dual vector does not match mesh")
    if fixed is None:
        fixed = np.flatnonzero(mesh.holdall.on_boundary(mesh.vertices, 1e-10))
    fixed = np.asarray(fixed, dtype=np.int64)
    if len(fixed) == 0:
        raise ValueError(
            "no fixed vertices: without a zero trace the problem is invariant "
            "under translations and unbounded whenever J' acts on constants"
        )
    ell_free = ell.copy()
    ell_free[fixed] = 0.0
    scale = np.linalg.norm(ell_free)
    if scale == 0.0:
        return DirectionResult(np.zeros_like(ell), 0.0, p, 0, 0.0)

    F = _PFunctional(mesh, ell_free / scale, fixed)
    total = 0
    w = None
    if warm_start is not None and np.any(warm_start):
        w0 = np.asarray(warm_start, dtype=float).ravel().copy()
        w0[F.fixed_dofs] = 0.0
        s = _optimal_scale(F, w0, p)
        if s > 0:
            w, its, ok = _newton(F, s * w0, p, inner_tol, max_inner, STEP_TOL)
            total += its
            if not ok:
                log.debug("warm start did not converge in %d iterations, restarting", its)
                w = None
    if w is None:
        w = np.zeros(2 * mesh.n_vertices)
        w = cg_solve(F.hessian(w, 2), -F.gradient(w, 2), tol=1e-10)
        total += 1
        q = 2
        while q < p:
            q = min(2 * q, p)
            w = _optimal_scale(F, w, q) * w
            if q == p:
                w, its, ok = _newton(F, w, q, inner_tol, max_inner, STEP_TOL)
            else:
                w, its, ok = _newton(F, w, q, 1e-4, max_inner)
            total += its
        if not ok:
            raise DirectionError(
                "direction subproblem did not converge", float(np.linalg.norm(F.gradient(w, p))), total
            )

    W = w.reshape(-1, 2)
    W[fixed] = 0.0
    norms = spectral_norms(element_gradients(mesh, W))
    top = float(norms.max())
    if top == 0.0:
        return DirectionResult(np.zeros_like(ell), 0.0, p, total, 0.0)
    V = W / top
    estimate = -float(np.sum(ell * V))
    return DirectionResult(V, estimate, p, total, float(spectral_norms(element_gradients(mesh, V)).max()))
