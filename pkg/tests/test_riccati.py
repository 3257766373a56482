import numpy as np
import scipy.sparse as sp

from stefanlqr.dae import StefanOperator
from stefanlqr.fem import PhysicalParams, alpha_field, assemble_blocks
from stefanlqr.linalg import LowRankLDL, ldl_to_dense
from stefanlqr.mesh import build_rect_mesh
from stefanlqr.riccati import (
    AreProblem,
    MatrixDrift,
    SchurDrift,
    are_residual,
    solve_are_dense,
    solve_are_lowrank,
)


def _scalar_problem():
    return AreProblem(E=sp.csr_matrix(np.eye(1)), drift=MatrixDrift(np.array([[-1.0]])),
                      B=np.array([[1.0]]), C=np.array([[1.0]]),
                      S=np.array([[1.0]]))


def _diffusion_problem(nx, ny):
    """2D grid Laplacian drift with one input and two point outputs."""
    def lap1d(k):
        return sp.diags([np.full(k - 1, 1.0), np.full(k, -2.0),
                         np.full(k - 1, 1.0)], [-1, 0, 1])
    L = sp.kronsum(lap1d(nx), lap1d(ny), format="csr")
    n = nx * ny
    F = (nx + 1) ** 2 / 10.0 * L
    E = sp.identity(n, format="csr")
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = np.zeros((2, n))
    C[0, n // 3] = 1.0
    C[1, 2 * n // 3] = 1.0
    return AreProblem(E=E, drift=MatrixDrift(F), B=B, C=C, S=np.eye(2))


def test_dense_scalar():
    X = solve_are_dense(_scalar_problem())
    np.testing.assert_allclose(X, [[-1.0 + np.sqrt(2.0)]], atol=1e-12)


def test_dense_zero_output():
    p = _scalar_problem()
    p.C = np.zeros((1, 1))
    X = solve_are_dense(p)
    np.testing.assert_allclose(X, [[0.0]], atol=1e-14)


def test_dense_random_stable():
    rng = np.random.default_rng(20)
    n = 20
    G = rng.standard_normal((n, n))
    F = -(G @ G.T) - n * np.eye(n)
    E = np.eye(n) + 0.1 * np.diag(rng.uniform(size=n))
    p = AreProblem(E=sp.csr_matrix(E), drift=MatrixDrift(F),
                   B=rng.standard_normal((n, 2)),
                   C=rng.standard_normal((3, n)), S=np.eye(3))
    X = solve_are_dense(p)
    assert are_residual(p, X) <= 1e-10
    np.testing.assert_allclose(X, X.T, atol=1e-12)


def test_lowrank_scalar():
    sol = solve_are_lowrank(_scalar_problem(), tol=1e-12)
    x = ldl_to_dense(sol.X)[0, 0]
    assert abs(x - (-1.0 + np.sqrt(2.0))) <= 1e-10


def test_lowrank_zero_output_gives_rank_zero():
    p = _scalar_problem()
    p.C = np.zeros((1, 1))
    sol = solve_are_lowrank(p, tol=1e-10)
    assert sol.rank == 0


def test_lowrank_matches_dense_diffusion():
    p = _diffusion_problem(10, 10)
    X_dense = solve_are_dense(p)
    sol = solve_are_lowrank(p, tol=1e-9)
    diff = np.linalg.norm(ldl_to_dense(sol.X) - X_dense, 2)
    assert diff <= 1e-6 * np.linalg.norm(X_dense, 2)
    assert sol.residual <= 1e-9


def test_lowrank_psd_invariant():
    p = _diffusion_problem(8, 8)
    sol = solve_are_lowrank(p, tol=1e-9)
    w = np.linalg.eigvalsh(0.5 * (sol.X.D + sol.X.D.T))
    assert w.min() >= -1e-10 * np.abs(w).max()


def test_lowrank_warm_start():
    p = _diffusion_problem(8, 8)
    sol = solve_are_lowrank(p, tol=1e-9)
    warm = solve_are_lowrank(p, tol=1e-9, x0=sol.X)
    assert warm.newton_iterations <= sol.newton_iterations
    diff = np.linalg.norm(ldl_to_dense(warm.X) - ldl_to_dense(sol.X), 2)
    assert diff <= 1e-7 * np.linalg.norm(ldl_to_dense(sol.X), 2)


def test_residual_zero_matrix_is_one():
    p = _diffusion_problem(5, 5)
    assert abs(are_residual(p, LowRankLDL.zero(p.n)) - 1.0) <= 1e-14


def test_residual_lowrank_matches_dense_evaluation():
    p = _diffusion_problem(6, 6)
    rng = np.random.default_rng(21)
    L = rng.standard_normal((p.n, 4))
    D = np.diag(rng.uniform(0.1, 1.0, 4))
    f = LowRankLDL(L, D)
    r_lr = are_residual(p, f)
    r_dense = are_residual(p, ldl_to_dense(f))
    np.testing.assert_allclose(r_lr, r_dense, rtol=1e-10)


def _stefan_are_problem(nx=6, ny=6, lam=1e-4):
    params = PhysicalParams()
    m = build_rect_mesh(nx, ny, 0.5)
    theta = params.theta_initial(m.vertices)
    bs = assemble_blocks(m, theta, alpha_field(m, params), params)
    op = StefanOperator.from_blocks(bs)
    tau_beta = 2.5e-3
    drift = SchurDrift(op, c_A=tau_beta, G=-0.5 * bs.M_tilde)
    n = op.n
    B = np.sqrt(tau_beta / lam) * np.asarray(bs.B_theta.sum(axis=1))
    C = np.zeros((2, n))
    C[0, 0] = 1.0
    C[1, n // 2] = 1.0
    return AreProblem(E=bs.M_tilde, drift=drift, B=B, C=C,
                      S=tau_beta * np.eye(2))


def test_lowrank_matches_dense_on_stefan_operator():
    p = _stefan_are_problem()
    X_dense = solve_are_dense(p, tol=1e-11)
    sol = solve_are_lowrank(p, tol=1e-8)
    diff = np.linalg.norm(ldl_to_dense(sol.X) - X_dense, 2)
    assert diff <= 1e-6 * np.linalg.norm(X_dense, 2)
    assert sol.residual <= 1e-8
