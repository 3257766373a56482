"""Low-rank BDF march for the non-autonomous generalized DRE.

The differential Riccati equation

    -M^T Xdot M = C^T C + (Mdot + A)^T X M + M^T X (Mdot + A)
                  - M^T X B B^T X M,    X(t_end) = 0,

is integrated backwards in time with an implicit BDF method of order 1 or
2.  Each step reduces to one algebraic Riccati equation whose constant
term stacks the output operator with the mass-weighted history factors;
the multistep weighting makes that term indefinite for order 2, which the
LDL^T machinery absorbs directly.  Feedback gains are emitted per step and
interpolated linearly in between.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .dae import StefanOperator
from .linalg import LowRankLDL
from .riccati import AreProblem, MatrixDrift, SchurDrift, solve_are_lowrank


@dataclass(frozen=True)
class TimeGridPair:
    """Forward grid and its index-reversed backward companion."""

    t_fwd: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t_fwd, dtype=float)
        object.__setattr__(self, "t_fwd", t)
        if t.ndim != 1 or t.size < 2 or not np.all(np.diff(t) > 0):
            raise ValueError("forward grid must be strictly increasing")

    @classmethod
    def uniform(cls, t_end: float, n_t: int) -> "TimeGridPair":
        return cls(np.linspace(0.0, t_end, n_t + 1))

    @property
    def t_bwd(self) -> np.ndarray:
        return self.t_fwd[::-1]

    @property
    def n_steps(self):
        return self.t_fwd.size - 1


@dataclass(frozen=True)
class BdfCoefficients:
    """Constant-step BDF coefficients: beta and alpha_1..alpha_p."""

    order: int
    beta: float
    alphas: tuple

    @classmethod
    def for_order(cls, p: int) -> "BdfCoefficients":
        if p == 1:
            return cls(1, 1.0, (-1.0,))
        if p == 2:
            return cls(2, 2.0 / 3.0, (-4.0 / 3.0, 1.0 / 3.0))
        raise ValueError(f"unsupported BDF order {p}")


class CoefficientProvider:
    """Time-dependent DRE coefficients from callables.

    ``a(t)`` may return a matrix or an implicit :class:`StefanOperator`;
    ``b(t)`` must already include the control-weight scaling 1/sqrt(lam).
    If no mass derivative is supplied it is approximated by centered
    differences with step ``h`` (one-sided at the horizon ends).
    """

    def __init__(self, m, a, b, c, mdot=None, h=None,
                 t_min=0.0, t_max=1.0):
        self._m, self._a, self._b, self._c = m, a, b, c
        self._mdot = mdot
        self.h = h
        self.t_min, self.t_max = t_min, t_max
        if mdot is None and h is None:
            raise ValueError("either mdot or a difference step h is required")

    def M(self, t):
        return self._m(t)

    def A(self, t):
        return self._a(t)

    def B(self, t):
        return np.atleast_2d(np.asarray(self._b(t), dtype=float))

    def C(self, t):
        return np.atleast_2d(np.asarray(self._c(t), dtype=float))

    def Mdot(self, t):
        if self._mdot is not None:
            return self._mdot(t)
        return mdot_centered(self._m, t, self.h, self.t_min, self.t_max)


def mdot_centered(mfun, t: float, h: float, t_min: float = 0.0,
                  t_max: float = 1.0):
    """Centered difference of the mass matrix, one-sided at the ends."""
    lo, hi = t - h, t + h
    if lo < t_min:
        lo = t
    if hi > t_max:
        hi = t
    if hi == lo:
        raise ValueError("degenerate difference stencil")
    M_hi, M_lo = mfun(hi), mfun(lo)
    if sp.issparse(M_hi):
        return (sp.csr_matrix(M_hi) - sp.csr_matrix(M_lo)) / (hi - lo)
    return (np.asarray(M_hi, dtype=float) - np.asarray(M_lo)) / (hi - lo)


@dataclass
class GainSchedule:
    """Feedback gains on the backward grid with linear interpolation."""

    times: np.ndarray
    gains: list
    diagnostics: list = field(default_factory=list)
    factors: list | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("gain schedule times must be increasing")
        if len(self.gains) != self.times.size:
            raise ValueError("one gain matrix per time is required")

    def gain_at(self, t: float) -> np.ndarray:
        return gain_at(self, t)


def gain_at(schedule: GainSchedule, t: float) -> np.ndarray:
    """Entrywise-linear interpolation of the gain at time t."""
    times = schedule.times
    if t < times[0] - 1e-12 or t > times[-1] + 1e-12:
        raise ValueError(f"time {t} outside the gain schedule horizon")
    t = min(max(t, times[0]), times[-1])
    k = int(np.searchsorted(times, t, side="right")) - 1
    if k == times.size - 1 or times[k] == t:
        return schedule.gains[k]
    w = (t - times[k]) / (times[k + 1] - times[k])
    return (1.0 - w) * schedule.gains[k] + w * schedule.gains[k + 1]


def _step_problem(provider, t_hat, tau, coeffs, history):
    """Assemble the per-step ARE from the multistep history."""
    tb = tau * coeffs.beta
    M = provider.M(t_hat)
    Mdot = provider.Mdot(t_hat)
    A = provider.A(t_hat)
    if isinstance(A, StefanOperator):
        G = tb * sp.csr_matrix(Mdot) - 0.5 * sp.csr_matrix(M)
        drift = SchurDrift(A, c_A=tb, G=G)
    elif sp.issparse(A) or sp.issparse(M):
        drift = MatrixDrift(tb * sp.csr_matrix(A)
                            + tb * sp.csr_matrix(Mdot) - 0.5 * sp.csr_matrix(M))
    else:
        drift = MatrixDrift(tb * np.asarray(A, dtype=float)
                            + tb * np.asarray(Mdot) - 0.5 * np.asarray(M))
    B_k = np.sqrt(tb) * provider.B(t_hat)
    C = provider.C(t_hat)
    r = C.shape[0]
    C_rows = [C]
    S_blocks = [tb * np.eye(r)]
    for alpha_j, Xj in zip(coeffs.alphas, history):
        C_rows.append((M.T @ Xj.L).T)
        S_blocks.append(-alpha_j * Xj.D)
    C_k = np.vstack(C_rows)
    S_k = scipy.linalg.block_diag(*S_blocks)
    return AreProblem(E=M, drift=drift, B=B_k, C=C_k,
                      S=0.5 * (S_k + S_k.T)), M


def bdf_step(provider, t_hat: float, tau: float, coeffs: BdfCoefficients,
             history: list, lam: float, tol: float = 1e-8,
             shifts0: list | None = None):
    """One backward BDF step: solve the step ARE and emit the gain.

    ``history`` holds the low-rank solutions of the previous p steps, most
    recent first.  ``shifts0`` recycles the ADI shifts of a neighbouring
    step.  Returns (solution, gain).
    """
    if len(history) < coeffs.order:
        raise ValueError("insufficient history for the requested order")
    problem, M = _step_problem(provider, t_hat, tau, coeffs,
                               history[:coeffs.order])
    sol = solve_are_lowrank(problem, tol=tol, x0=history[0], shifts0=shifts0)
    X = sol.X
    if X.rank:
        K = (provider.B(t_hat).T @ X.L) @ X.D @ (X.L.T @ M) / np.sqrt(lam)
    else:
        K = np.zeros((provider.B(t_hat).shape[1], M.shape[0]))
    return sol, np.asarray(K)


def bdf_solve(provider, grids: TimeGridPair, p: int, lam: float,
              tol: float = 1e-8, n_ord: int = 10,
              store_factors: bool = False) -> GainSchedule:
    """Integrate the DRE backwards over the grid with terminal X = 0.

    The order-2 march bootstraps its first step with ``n_ord`` refined
    order-1 substeps.
    """
    coeffs = BdfCoefficients.for_order(p)
    t_bwd = grids.t_bwd
    n_t = grids.n_steps
    n = provider.M(t_bwd[0]).shape[0]
    m_in = provider.B(t_bwd[0]).shape[1]

    X_hist = [LowRankLDL.zero(n)]
    times = [t_bwd[0]]
    gains = [np.zeros((m_in, n))]
    diagnostics = []
    factors = [X_hist[0]] if store_factors else None

    start = 1
    if p == 2:
        # startup: refined order-1 substeps from t_end down to t_bwd[1]
        coeffs1 = BdfCoefficients.for_order(1)
        sub = np.linspace(t_bwd[0], t_bwd[1], n_ord + 1)
        X = X_hist[0]
        for j in range(1, n_ord + 1):
            tau_sub = sub[j - 1] - sub[j]
            sol, K = bdf_step(provider, sub[j], tau_sub, coeffs1, [X],
                              lam, tol=tol)
            X = sol.X
        times.append(t_bwd[1])
        gains.append(K)
        diagnostics.append({"t": t_bwd[1], "newton": sol.newton_iterations,
                            "adi": sol.adi_iterations, "rank": sol.rank,
                            "residual": sol.residual})
        X_hist = [X, X_hist[0]]
        if store_factors:
            factors.append(X)
        start = 2

    for k in range(start, n_t + 1):
        tau = t_bwd[k - 1] - t_bwd[k]
        sol, K = bdf_step(provider, t_bwd[k], tau, coeffs, X_hist, lam,
                          tol=tol)
        times.append(t_bwd[k])
        gains.append(K)
        diagnostics.append({"t": t_bwd[k], "newton": sol.newton_iterations,
                            "adi": sol.adi_iterations, "rank": sol.rank,
                            "residual": sol.residual})
        X_hist = [sol.X] + X_hist[: coeffs.order - 1]
        if store_factors:
            factors.append(sol.X)

    order = np.argsort(times)
    schedule = GainSchedule(
        times=np.asarray(times)[order],
        gains=[gains[i] for i in order],
        diagnostics=sorted(diagnostics, key=lambda d: d["t"]),
        factors=[factors[i] for i in order] if store_factors else None,
    )
    return schedule
