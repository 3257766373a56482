"""Implicit Schur-complement reduction of the coupled Stefan DAE.

The semi-discrete system couples differential temperature dofs with
algebraic mesh-velocity dofs through an invertible velocity block, i.e. it
is a semi-explicit index-1 DAE.  The reduced drift
``A = A_tt - A_tV inv(A_VV) A_Vt`` is generally dense and is therefore only
ever applied or solved with implicitly: applications cost one sparse solve
with the velocity block, and shifted solves go through a sparse augmented
saddle-point system factorized once per shift.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import BlockSystem
from .linalg import SparseFactorization, lu_factor


class StefanOperator:
    """Implicit representation of the reduced drift of one block system."""

    def __init__(self, A_tt, A_tV, A_Vt, A_VV, M=None):
        self.A_tt = sp.csr_matrix(A_tt)
        self.A_tV = sp.csr_matrix(A_tV)
        self.A_Vt = sp.csr_matrix(A_Vt)
        self.A_VV = sp.csr_matrix(A_VV)
        self.M = sp.csr_matrix(M) if M is not None else None
        self.n = self.A_tt.shape[0]
        self.n_alg = self.A_VV.shape[0]
        self._vv_fact = lu_factor(self.A_VV)

    @classmethod
    def from_blocks(cls, bs: BlockSystem) -> "StefanOperator":
        if bs.A_tt_tilde is None:
            raise ValueError("block system lacks the tilde modification")
        return cls(bs.A_tt_tilde, bs.A_tV_tilde, bs.A_Vt_tilde, bs.A_V_V,
                   M=bs.M_tilde)

    def apply_A(self, x: np.ndarray, trans: str = "N") -> np.ndarray:
        """Apply the reduced drift (or its transpose) to x; one sparse solve."""
        x = np.asarray(x, dtype=float)
        if trans == "N":
            z = self._vv_fact.solve(self.A_Vt @ x)
            return self.A_tt @ x - self.A_tV @ z
        z = self._vv_fact.solve(self.A_tV.T @ x, trans="T")
        return self.A_tt.T @ x - self.A_Vt.T @ z


class CombinedFactorization:
    """Factorization of c_A * A_reduced + W via the sparse augmented system.

    Solves (c_A*A + W) x = rhs by eliminating the algebraic block of
    [[c_A*A_tt + W, c_A*A_tV], [A_Vt, A_VV]]; transpose solves reuse the
    same factorization.
    """

    def __init__(self, op: StefanOperator, c_A: float, W):
        self.op = op
        self.n = op.n
        aug = sp.bmat([
            [c_A * op.A_tt + sp.csr_matrix(W), c_A * op.A_tV],
            [op.A_Vt, op.A_VV],
        ], format="csc")
        self._fact = SparseFactorization(aug)

    def solve(self, rhs: np.ndarray, trans: str = "N") -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        single = rhs.ndim == 1
        R = rhs[:, None] if single else rhs
        full = np.vstack([R, np.zeros((self.op.n_alg, R.shape[1]))])
        X = self._fact.solve(full, trans=trans)
        x = X[:self.n]
        return x[:, 0] if single else x


def shifted_factorization(op: StefanOperator, p: float,
                          M=None) -> CombinedFactorization:
    """Factorization for (A + p*M) solves, reused across right-hand sides."""
    M = op.M if M is None else sp.csr_matrix(M)
    if M is None:
        raise ValueError("no mass matrix available for the shift")
    return CombinedFactorization(op, 1.0, p * M)


def solve_shifted(op: StefanOperator, p: float, M, rhs) -> np.ndarray:
    """Solve (A + p*M) x = rhs through the augmented saddle-point system."""
    return shifted_factorization(op, p, M).solve(rhs)


def dense_reduced(op: StefanOperator) -> np.ndarray:
    """Densify the reduced drift for oracle tests; guarded to small sizes."""
    if op.n > 600:
        raise ValueError(f"dense reduction refused for n = {op.n} > 600")
    Z = np.column_stack([op._vv_fact.solve(col) for col in
                         op.A_Vt.toarray().T])
    return op.A_tt.toarray() - op.A_tV @ Z
