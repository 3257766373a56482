"""Algebraic Riccati solvers for the per-step equations of the DRE march.

The generalized equation

    0 = C^T S C + F^T X E + E^T X F - E^T X B B^T X E

is solved either densely (Newton iteration with Bartels-Stewart Lyapunov
solves; oracle for small n) or in low-rank LDL^T form (Newton-Kleinman
outer iteration with an LDL^T low-rank ADI inner solver driven by real
shifts).  The drift F is only ever applied or shift-solved with, so the
implicit Schur-reduced Stefan operator plugs in directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import dae
from .linalg import LowRankLDL, SparseFactorization, ldl_compress, ldl_to_dense


class RiccatiError(Exception):
    pass


# ---------------------------------------------------------------------------
# Drift abstractions
# ---------------------------------------------------------------------------

class MatrixDrift:
    """Drift given as an explicit (dense or sparse) matrix F."""

    def __init__(self, F):
        self.F = F
        self.n = F.shape[0]
        self._dense = None

    def apply(self, X, trans="N"):
        F = self.F if trans == "N" else self.F.T
        return F @ X

    def shifted_solver(self, p, E):
        if sp.issparse(self.F) and sp.issparse(E):
            return SparseFactorization(self.F + p * E)
        Fd = self.F.toarray() if sp.issparse(self.F) else np.asarray(self.F)
        Ed = E.toarray() if sp.issparse(E) else np.asarray(E)
        return _DenseFactorization(Fd + p * Ed)

    def dense(self):
        if self._dense is None:
            self._dense = self.F.toarray() if sp.issparse(self.F) \
                else np.asarray(self.F, dtype=float)
        return self._dense


class SchurDrift:
    """Drift F = c_A * A_reduced + G around an implicit Stefan operator."""

    def __init__(self, op: dae.StefanOperator, c_A: float = 1.0, G=None):
        self.op = op
        self.c_A = c_A
        self.G = sp.csr_matrix(G) if G is not None \
            else sp.csr_matrix((op.n, op.n))
        self.n = op.n
        self._dense = None

    def apply(self, X, trans="N"):
        G = self.G if trans == "N" else self.G.T
        return self.c_A * self.op.apply_A(X, trans=trans) + G @ X

    def shifted_solver(self, p, E):
        return dae.CombinedFactorization(self.op, self.c_A, self.G + p * E)

    def dense(self):
        if self._dense is None:
            self._dense = self.c_A * dae.dense_reduced(self.op) \
                + self.G.toarray()
        return self._dense


class _DenseFactorization:
    def __init__(self, A):
        self._lu = scipy.linalg.lu_factor(A)

    def solve(self, rhs, trans="N"):
        return scipy.linalg.lu_solve(self._lu, rhs,
                                     trans=0 if trans == "N" else 1)


class _ClosedLoopFactorization:
    """Solves (F - B K + p E) systems via a low-rank update of (F + p E)."""

    def __init__(self, zfact, B, K):
        self.zfact = zfact
        self.B = B
        self.K = K
        m = B.shape[1]
        self._eye = np.eye(m)
        self._n_data = None
        self._t_data = None

    def solve(self, rhs, trans="N"):
        Y = self.zfact.solve(rhs, trans=trans)
        if trans == "N":
            if self._n_data is None:
                U = self.zfact.solve(self.B, trans="N")
                cap = np.linalg.inv(self._eye - self.K @ U)
                self._n_data = (U, cap)
            U, cap = self._n_data
            return Y + U @ (cap @ (self.K @ Y))
        if self._t_data is None:
            U = self.zfact.solve(self.K.T, trans="T")
            cap = np.linalg.inv(self._eye - self.B.T @ U)
            self._t_data = (U, cap)
        U, cap = self._t_data
        return Y + U @ (cap @ (self.B.T @ Y))


# ---------------------------------------------------------------------------
# Problem container
# ---------------------------------------------------------------------------

@dataclass
class AreProblem:
    """Data of one generalized ARE.

    E is the (sparse) mass matrix, drift an object exposing
    ``apply(X, trans)`` and ``shifted_solver(p, E)``, B dense n x m,
    C dense r x n, S symmetric r x r.
    """

    E: sp.spmatrix
    drift: object
    B: np.ndarray
    C: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        if sp.issparse(self.E):
            self.E = sp.csr_matrix(self.E)
        else:
            self.E = np.atleast_2d(np.asarray(self.E, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.S = np.atleast_2d(np.asarray(self.S, dtype=float))
        n = self.E.shape[0]
        if self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("inconsistent ARE dimensions")
        if self.S.size and np.abs(self.S - self.S.T).max() \
                > 1e-12 * max(1.0, np.abs(self.S).max()):
            raise ValueError("S must be symmetric")

    @property
    def n(self):
        return self.E.shape[0]


@dataclass
class AreSolution:
    X: LowRankLDL
    residual: float
    newton_iterations: int
    adi_iterations: int
    shifts: list | None = None      # ADI shifts used, reusable as warm start

    @property
    def rank(self):
        return self.X.rank


# ---------------------------------------------------------------------------
# Residual evaluation
# ---------------------------------------------------------------------------

def _sym_norm2(U, K):
    """Spectral norm of U K U^T (K small symmetric) via thin QR."""
    if U.shape[1] == 0:
        return 0.0
    R = np.linalg.qr(U, mode="r")
    core = R @ K @ R.T
    core = 0.5 * (core + core.T)
    w = np.linalg.eigvalsh(core)
    return float(np.abs(w).max()) if w.size else 0.0


def _constant_term_norm(p: AreProblem):
    return _sym_norm2(p.C.T, p.S)


def are_residual(p: AreProblem, X) -> float:
    """Relative residual ||R(X)||_2 / ||C^T S C||_2, low-rank throughout."""
    denom = _constant_term_norm(p)
    if denom == 0.0:
        denom = 1.0
    if isinstance(X, LowRankLDL):
        if X.rank == 0:
            return _sym_norm2(p.C.T, p.S) / denom
        L, D = X.L, X.D
        FL = p.drift.apply(L, trans="T")
        EL = p.E.T @ L
        BL = p.B.T @ L                       # m x s
        s = L.shape[1]
        r = p.C.shape[0]
        U = np.hstack([p.C.T, FL, EL])
        K = np.zeros((r + 2 * s, r + 2 * s))
        K[:r, :r] = p.S
        K[r:r + s, r + s:] = D
        K[r + s:, r:r + s] = D
        K[r + s:, r + s:] = -D @ (BL.T @ BL) @ D
        return _sym_norm2(U, K) / denom
    X = np.asarray(X, dtype=float)
    E = p.E.toarray() if sp.issparse(p.E) else np.asarray(p.E, dtype=float)
    F = p.drift.dense()
    R = p.C.T @ p.S @ p.C + F.T @ X @ E + E.T @ X @ F \
        - E.T @ X @ p.B @ (p.B.T @ X @ E)
    return float(np.linalg.norm(R, 2)) / denom


# ---------------------------------------------------------------------------
# Dense oracle solver
# ---------------------------------------------------------------------------

def solve_are_dense(p: AreProblem, tol: float = 1e-10,
                    max_newton: int = 50) -> np.ndarray:
    """Newton iteration from X = 0 with dense Lyapunov solves.

    Intended as an oracle on small problems; refuses n > 600.
    """
    if p.n > 600:
        raise ValueError(f"dense ARE solve refused for n = {p.n} > 600")
    E = p.E.toarray() if sp.issparse(p.E) else np.asarray(p.E)
    F = p.drift.dense()
    Einv = np.linalg.inv(E)
    A = F @ Einv                       # standard-form drift
    Q = Einv.T @ (p.C.T @ p.S @ p.C) @ Einv
    Q = 0.5 * (Q + Q.T)
    B = p.B

    X = np.zeros((p.n, p.n))
    prev_res = are_residual(p, X)
    if prev_res <= tol:
        return X
    for it in range(max_newton):
        K = B.T @ X
        Acl = A - B @ K
        rhs = -(Q + K.T @ K)
        X_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, rhs)
        X_new = 0.5 * (X_new + X_new.T)
        res = are_residual(p, X_new)
        if res <= tol:
            return X_new
        if it > 0 and res > prev_res:
            return X        # reject non-monotone step, keep last iterate
        X, prev_res = X_new, res
    raise RiccatiError(f"dense Newton stagnated at residual {prev_res:.3e}")


# ---------------------------------------------------------------------------
# Shift heuristic
# ---------------------------------------------------------------------------

def _arnoldi_ritz(opfun, n, k, rng):
    k = min(k, n)
    Q = np.zeros((n, k + 1))
    H = np.zeros((k + 1, k))
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    steps = k
    for j in range(k):
        w = opfun(Q[:, j])
        for i in range(j + 1):
            H[i, j] = Q[:, i] @ w
            w = w - H[i, j] * Q[:, i]
        h = np.linalg.norm(w)
        H[j + 1, j] = h
        if h < 1e-12:
            steps = j + 1
            break
        Q[:, j + 1] = w / h
    return np.linalg.eigvals(H[:steps, :steps])


def _penzl_shifts(apply_cl, solve_cl, E_fact, n, k_fwd=25, k_inv=15,
                  max_shifts=40):
    """Real negative ADI shifts from forward and inverse Ritz values.

    The candidate set is thinned to at most ``max_shifts`` values spread
    over the spectral range, so that cycling the shifts amortizes the
    factorization cost over many ADI iterations.
    """
    rng = np.random.default_rng(0)
    vals = list(_arnoldi_ritz(lambda v: E_fact.solve(apply_cl(v)),
                              n, k_fwd, rng))
    if solve_cl is not None and n > 1:
        inv_vals = _arnoldi_ritz(lambda v: solve_cl(E_fact.matvec(v)),
                                 n, k_inv, rng)
        vals.extend(1.0 / mu for mu in inv_vals if abs(mu) > 1e-14)
    shifts = sorted({float(np.real(v)) for v in vals if np.real(v) < 0},
                    key=abs, reverse=True)
    # drop near-duplicates
    out = []
    for s in shifts:
        if all(abs(s - t) > 1e-8 * max(abs(s), abs(t)) for t in out):
            out.append(s)
    if len(out) > max_shifts:
        idx = np.unique(np.round(np.linspace(0, len(out) - 1,
                                             max_shifts)).astype(int))
        out = [out[i] for i in idx]
    return out or [-1.0]


class _EFact:
    """Mass-matrix factorization with a plain matvec alongside solves."""

    def __init__(self, E):
        self.E = E
        self._fact = SparseFactorization(E) if sp.issparse(E) \
            else _DenseFactorization(np.asarray(E))

    def solve(self, x):
        return self._fact.solve(x)

    def matvec(self, x):
        return self.E @ x


# ---------------------------------------------------------------------------
# Low-rank Lyapunov (LDL^T LR-ADI) and Newton-Kleinman
# ---------------------------------------------------------------------------

def _lradi_lyapunov(solver_for_shift, E, G, T, shifts, tol, max_iter):
    """Solve F^T X E + E^T X F = -G T G^T with X = L D L^T, real shifts.

    ``solver_for_shift(p)`` returns an object solving (F + p E) systems.
    The iteration tracks the residual factor W with
    ||W T W^T|| / ||G T G^T|| as stopping criterion.
    """
    W = G.copy()
    norm0 = _sym_norm2(G, T)
    if norm0 == 0.0:
        return LowRankLDL.zero(G.shape[0]), 0
    Ls, Ds = [], []
    cache = {}
    it = 0
    while it < max_iter:
        p = shifts[it % len(shifts)]
        if p not in cache:
            cache[p] = solver_for_shift(p)
        V = cache[p].solve(W, trans="T")
        Ls.append(V)
        Ds.append(-2.0 * p * T)
        W = W - 2.0 * p * (E.T @ V)
        it += 1
        if _sym_norm2(W, T) <= tol * norm0:
            break
    else:
        raise RiccatiError(f"ADI did not converge within {max_iter} "
                           f"iterations (relative residual "
                           f"{_sym_norm2(W, T) / norm0:.3e})")
    L = np.hstack(Ls)
    D = scipy.linalg.block_diag(*Ds)
    return LowRankLDL(L, 0.5 * (D + D.T)), it


def _solve_scalar(p: AreProblem) -> AreSolution | None:
    """Stabilizing root of a 1x1 ARE by the quadratic formula.

    Returns None when no real stabilizing root exists (the iterative
    path then takes over).
    """
    e = float(p.E[0, 0])
    f = float(p.drift.apply(np.ones((1, 1)))[0, 0])
    b2 = float(p.B[0] @ p.B[0])
    c = float(p.C[:, 0] @ p.S @ p.C[:, 0])
    fe = f * e
    if b2 == 0.0:
        if fe >= 0.0:
            return None
        x = -c / (2.0 * fe)
    else:
        disc = fe * fe + b2 * e * e * c
        if disc < 0.0:
            return None
        x = (fe + np.sqrt(disc)) / (b2 * e * e)
    res = abs(c + 2.0 * fe * x - b2 * e * e * x * x) / max(abs(c), 1e-300)
    X = LowRankLDL(np.ones((1, 1)), np.array([[x]])) if x != 0.0 \
        else LowRankLDL.zero(1)
    return AreSolution(X, res, 0, 0)


def _solve_projected(p: AreProblem, x0: LowRankLDL, tol: float,
                     compress_tol: float):
    """Galerkin fast path: solve the ARE restricted to span(x0.L).

    In a slowly varying sequence of AREs (a Riccati ODE march) the column
    space of the previous solution usually still spans the current one, so
    a small dense solve in that subspace replaces the sparse iteration.
    The residual is evaluated against the full problem; the caller decides
    whether the candidate is acceptable.
    """
    V, _ = np.linalg.qr(x0.L)
    s = V.shape[1]
    E_s = V.T @ (p.E @ V)
    A_s = V.T @ p.drift.apply(V)
    sub = AreProblem(E=E_s, drift=MatrixDrift(A_s), B=V.T @ p.B,
                     C=p.C @ V, S=p.S)
    X_s = solve_are_dense(sub, tol=min(0.1 * tol, 1e-10))
    w, U = np.linalg.eigh(0.5 * (X_s + X_s.T))
    amax = np.abs(w).max() if w.size else 0.0
    if amax == 0.0:
        X = LowRankLDL.zero(p.n)
    else:
        keep = np.abs(w) > compress_tol * amax
        X = LowRankLDL(V @ U[:, keep], np.diag(w[keep])) if keep.any() \
            else LowRankLDL.zero(p.n)
    return X, are_residual(p, X)


def solve_are_lowrank(p: AreProblem, tol: float = 1e-8,
                      x0: LowRankLDL | None = None,
                      max_newton: int = 50, max_adi: int = 200,
                      compress_tol: float | None = None,
                      shifts0: list | None = None) -> AreSolution:
    """Newton-Kleinman outer iteration with LDL^T LR-ADI Lyapunov solves.

    ``shifts0`` recycles ADI shifts from a nearby problem (e.g. the
    previous step of a Riccati ODE march); if the recycled shifts fail to
    converge, fresh shifts are computed once and the solve is retried.
    """
    n = p.n
    if n == 1:
        sol = _solve_scalar(p)
        if sol is not None:
            return sol
    if compress_tol is None:
        # truncating the factors well below the target residual keeps the
        # ranks (and hence all downstream costs) proportional to accuracy
        compress_tol = max(1e-10, 1e-2 * tol)
    m = p.B.shape[1]
    E_fact = _EFact(p.E)
    X = x0 if x0 is not None else LowRankLDL.zero(n)
    prev_res = are_residual(p, X)
    if prev_res <= tol:
        return AreSolution(X, prev_res, 0, 0, shifts=shifts0)
    if 0 < X.rank <= min(n - 1, 600):
        try:
            X_proj, res_proj = _solve_projected(p, X, tol, compress_tol)
            if res_proj <= tol:
                return AreSolution(X_proj, res_proj, 0, 0, shifts=shifts0)
            if res_proj < prev_res:
                X, prev_res = X_proj, res_proj
        except (RiccatiError, np.linalg.LinAlgError):
            pass
    adi_total = 0
    T = scipy.linalg.block_diag(p.S, np.eye(m))
    T = 0.5 * (T + T.T)
    zcache: dict = {}

    def base_fact(q):
        if q not in zcache:
            zcache[q] = p.drift.shifted_solver(q, p.E)
        return zcache[q]

    shifts = list(shifts0) if shifts0 else None
    recycled = shifts is not None
    for newton_it in range(1, max_newton + 1):
        if X.rank:
            K = (p.B.T @ X.L) @ X.D @ (X.L.T @ p.E)       # m x n
        else:
            K = np.zeros((m, n))

        def apply_cl(v, K=K):
            return p.drift.apply(v) - p.B @ (K @ v)

        def solver_for_shift(q, K=K):
            return _ClosedLoopFactorization(base_fact(q), p.B, K)

        def fresh_shifts():
            try:
                solve0 = solver_for_shift(0.0)
                return _penzl_shifts(apply_cl,
                                     lambda v: solve0.solve(v), E_fact, n)
            except Exception:
                return [-1.0]

        if shifts is None:
            shifts = fresh_shifts()
        G = np.hstack([p.C.T, K.T])
        adi_tol = max(tol * 1e-2, 1e-14)
        try:
            X_new, adi_its = _lradi_lyapunov(solver_for_shift, p.E, G, T,
                                             shifts, adi_tol, max_adi)
        except RiccatiError:
            if recycled:
                recycled = False
                shifts = fresh_shifts()
                X_new, adi_its = _lradi_lyapunov(solver_for_shift, p.E, G,
                                                 T, shifts, adi_tol, max_adi)
            else:
                raise
        X_new = ldl_compress(X_new, compress_tol)
        adi_total += adi_its
        res = are_residual(p, X_new)
        if res <= tol:
            return AreSolution(X_new, res, newton_it, adi_total,
                               shifts=shifts)
        if newton_it > 1 and res > prev_res:
            return AreSolution(X, prev_res, newton_it - 1, adi_total,
                               shifts=shifts)
        X, prev_res = X_new, res
    raise RiccatiError(f"Newton-Kleinman stagnated at residual {prev_res:.3e}")
