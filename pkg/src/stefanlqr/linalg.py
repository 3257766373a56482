"""Sparse direct solves, low-rank LDL^T factors, and Matrix Market exchange.

Sparse matrices are scipy CSR matrices throughout; dense matrices are numpy
arrays.  The direct solver is SuperLU (right-looking LU with partial
pivoting and COLAMD fill-reducing ordering) behind a thin interface that
reports singular pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(Exception):
    """Raised when a direct factorization hits a zero pivot.

    ``row`` is the index of the offending pivot row, or ``None`` when the
    backend could not localize it.
    """

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


def _locate_singular_row(A: sp.csr_matrix):
    """Best-effort pivot row identification for a singular matrix."""
    nnz_per_row = np.diff(A.indptr)
    zero_rows = np.flatnonzero(nnz_per_row == 0)
    if zero_rows.size:
        return int(zero_rows[0])
    if A.shape[0] <= 2000:
        lu, piv = scipy.linalg.lu_factor(A.toarray(), check_finite=False)
        diag = np.abs(np.diag(lu))
        bad = np.flatnonzero(diag == 0.0)
        if bad.size:
            return int(bad[0])
    return None


class SparseFactorization:
    """LU factorization of a square sparse matrix.

    Read-only after construction; concurrent :meth:`solve` calls are safe.
    """

    def __init__(self, A):
        A = sp.csc_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix is {A.shape[0]}x{A.shape[1]}, not square")
        self.shape = A.shape
        try:
            self._lu = spla.splu(A)
        except RuntimeError as err:
            row = _locate_singular_row(sp.csr_matrix(A))
            where = f" (pivot row {row})" if row is not None else ""
            raise SingularMatrixError(f"singular pivot{where}: {err}", row=row) from err

    def solve(self, rhs, trans="N"):
        """Solve A x = rhs (or A^T x = rhs with ``trans='T'``)."""
        rhs = np.asarray(rhs, dtype=float)
        return self._lu.solve(rhs, trans=trans)


def lu_factor(A) -> SparseFactorization:
    """Factorize a square sparse matrix for repeated solves."""
    return SparseFactorization(A)


def solve(fact: SparseFactorization, rhs):
    return fact.solve(rhs)


@dataclass(frozen=True)
class LowRankLDL:
    """Low-rank symmetric factorization X = L D L^T.

    L is n x s, D is a symmetric s x s core (possibly indefinite).  The
    represented matrix is symmetric by construction; rank bound s <= n.
    """

    L: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.L, dtype=float))
        D = np.atleast_2d(np.asarray(self.D, dtype=float))
        object.__setattr__(self, "L", L)
        object.__setattr__(self, "D", D)
        if L.shape[1] != D.shape[0] or D.shape[0] != D.shape[1]:
            raise ValueError(f"incompatible factor shapes {L.shape} / {D.shape}")
        if D.size:
            dnorm = np.abs(D).max()
            if dnorm > 0 and np.abs(D - D.T).max() > 1e-12 * dnorm:
                raise ValueError("core matrix D is not symmetric")

    @property
    def n(self):
        return self.L.shape[0]

    @property
    def rank(self):
        return self.L.shape[1]

    @staticmethod
    def zero(n: int) -> "LowRankLDL":
        return LowRankLDL(np.zeros((n, 0)), np.zeros((0, 0)))


def ldl_to_dense(f: LowRankLDL) -> np.ndarray:
    """Densify L D L^T; the result is exactly symmetric."""
    X = f.L @ f.D @ f.L.T
    return 0.5 * (X + X.T)


def ldl_compress(f: LowRankLDL, tol: float) -> LowRankLDL:
    """Truncate a low-rank LDL^T factorization to eigenvalues above tol.

    Orthogonalizes L, eigendecomposes the projected core, and drops
    eigenvalues with magnitude below ``tol * max|eig|``.  Handles
    indefinite cores; idempotent at fixed tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if f.rank == 0:
        return f
    Q, R = np.linalg.qr(f.L)
    core = R @ f.D @ R.T
    core = 0.5 * (core + core.T)
    w, V = np.linalg.eigh(core)
    amax = np.abs(w).max() if w.size else 0.0
    keep = np.abs(w) > tol * amax if amax > 0 else np.zeros(w.shape, dtype=bool)
    if not keep.any():
        return LowRankLDL.zero(f.n)
    order = np.argsort(-np.abs(w[keep]))
    w = w[keep][order]
    V = V[:, keep][:, order]
    return LowRankLDL(Q @ V, np.diag(w))


def save_matrix_market(path, A, symmetry="general", comment=""):
    """Write a matrix in Matrix Market coordinate format.

    17 significant decimal digits are used so values round-trip bit-exactly.
    """
    if sp.issparse(A):
        A = sp.coo_matrix(A)
    scipy.io.mmwrite(str(path), A, comment=comment, field="real",
                     precision=17, symmetry=symmetry)


def load_matrix_market(path) -> sp.csr_matrix:
    A = scipy.io.mmread(str(path))
    if sp.issparse(A):
        return sp.csr_matrix(A)
    return sp.csr_matrix(np.atleast_2d(A))
