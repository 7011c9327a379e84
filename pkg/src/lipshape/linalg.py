"""Sparse SPD linear algebra: CSR assembly, Dirichlet elimination, Jacobi-PCG."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

__all__ = [
    "SparseMatrix",
    "assemble_from_triplets",
    "from_coo",
    "apply_dirichlet",
    "CsrPattern",
    "cg_solve",
    "ConvergenceError",
]


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


class SparseMatrix:
    """Immutable square CSR matrix with sorted, duplicate-free rows."""

    def __init__(self, csr: sp.csr_matrix):
        csr = sp.csr_matrix(csr)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1]:
            raise ValueError("matrix must be square")
        for arr in (csr.data, csr.indices, csr.indptr):
            arr.setflags(write=False)
        self._csr = csr

    @property
    def n(self) -> int:
        return self._csr.shape[0]

    @property
    def indptr(self) -> np.ndarray:
        return self._csr.indptr

    @property
    def indices(self) -> np.ndarray:
        return self._csr.indices

    @property
    def data(self) -> np.ndarray:
        return self._csr.data

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self._csr @ x

    __matmul__ = matvec

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix(self._csr + other._csr)

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def is_symmetric(self, rtol: float = 1e-12) -> bool:
        diff = abs(self._csr - self._csr.T)
        scale = abs(self._csr).max() if self._csr.nnz else 0.0
        return diff.nnz == 0 or diff.max() <= rtol * max(scale, np.finfo(float).tiny)


def assemble_from_triplets(n: int, triplets) -> SparseMatrix:
    """Build an ``n x n`` matrix from ``(row, col, value)`` triples, summing duplicates."""
    triplets = list(triplets)
    if not triplets:
        return from_coo(n, [], [], [])
    rows, cols, values = zip(*triplets)
    return from_coo(n, rows, cols, values)


def from_coo(n: int, rows, cols, values) -> SparseMatrix:
    """Vectorized form of :func:`assemble_from_triplets`."""
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    values = np.asarray(values, dtype=float).ravel()
    if not (len(rows) == len(cols) == len(values)):
        raise ValueError("triplet arrays differ in length")
    if len(rows) and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= n):
        raise IndexError(f"triplet index out of range for dimension {n}")
    return SparseMatrix(sp.coo_matrix((values, (rows, cols)), shape=(n, n)).tocsr())


class CsrPattern:
    """Fixed sparsity pattern for repeated element-by-element assembly.

    ``element_dofs`` has shape (n_elements, m); every call to :meth:`assemble`
    takes local matrices of shape (n_elements, m, m).
    """

    def __init__(self, n: int, element_dofs: np.ndarray):
        element_dofs = np.asarray(element_dofs, dtype=np.int64)
        m = element_dofs.shape[1]
        rows = np.repeat(element_dofs, m, axis=1).ravel()
        cols = np.tile(element_dofs, (1, m)).ravel()
        key = rows * n + cols
        uniq, self._slot = np.unique(key, return_inverse=True)
        self.n = n
        self._rows = uniq // n
        self.indices = (uniq % n).astype(np.int32)
        self.indptr = np.searchsorted(self._rows, np.arange(n + 1)).astype(np.int32)
        self._diag = np.flatnonzero(self._rows == self.indices)

    def assemble(self, local: np.ndarray, fixed: np.ndarray | None = None) -> SparseMatrix:
        """Sum local matrices; rows/cols of ``fixed`` dofs become identity rows."""
        data = np.bincount(self._slot, local.ravel(), minlength=len(self.indices))
        if fixed is not None and len(fixed):
            mask = np.zeros(self.n, dtype=bool)
            mask[fixed] = True
            data[mask[self._rows] | mask[self.indices]] = 0.0
            diag = self._diag[mask[self._rows[self._diag]]]
            data[diag] = 1.0
        return SparseMatrix(sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n)))


def apply_dirichlet(A: SparseMatrix, b: np.ndarray, dofs, values=0.0):
    """Symmetric elimination of prescribed values.

    Rows and columns of ``dofs`` are zeroed with a unit diagonal and the
    known values moved to the right-hand side, which keeps ``A`` SPD.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    known = np.zeros(A.n)
    known[dofs] = values
    rhs = np.asarray(b, dtype=float) - A.matvec(known)
    rhs[dofs] = known[dofs]
    keep = np.ones(A.n)
    keep[dofs] = 0.0
    D = sp.diags(keep)
    reduced = D @ A.csr @ D + sp.diags(1.0 - keep)
    return SparseMatrix(reduced), rhs


def cg_solve(
    A: SparseMatrix,
    b: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
    truncate: bool = False,
) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    Returns ``x`` with ``||A x - b||_2 <= tol * ||b||_2``; raises
    :class:`ConvergenceError` otherwise.  With ``truncate=True`` the iterate
    reached after ``max_iter`` steps is returned instead of raising (for
    inexact Newton methods; started from zero it is always a descent
    direction for the quadratic model).
    """
    b = np.asarray(b, dtype=float)
    n = A.n
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    target = tol * bnorm
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise ValueError("Jacobi preconditioner needs a positive diagonal")
    inv_diag = 1.0 / diag
    csr = A.csr

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - csr @ x
    rnorm = np.linalg.norm(r)
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    it = 0
    while rnorm > target:
        if it >= max_iter:
            if truncate:
                break
            raise ConvergenceError("CG did not converge", rnorm / bnorm, it)
        Ad = csr @ d
        dAd = d @ Ad
        if dAd <= 0:
            raise ConvergenceError("CG met a non-positive curvature direction", rnorm / bnorm, it)
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        it += 1
        rnorm = np.linalg.norm(r)
        if rnorm <= target:
            # guard against drift of the recursive residual
            rtrue = np.linalg.norm(b - csr @ x)
            if rtrue <= target:
                break
            r = b - csr @ x
            rnorm = rtrue
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    return x
