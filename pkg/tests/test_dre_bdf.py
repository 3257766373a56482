import numpy as np
import pytest
import scipy.sparse as sp

from stefanlqr.dre_bdf import (
    BdfCoefficients,
    CoefficientProvider,
    GainSchedule,
    TimeGridPair,
    bdf_solve,
    bdf_step,
    gain_at,
    mdot_centered,
)
from stefanlqr.linalg import LowRankLDL, ldl_to_dense
from stefanlqr.riccati import AreProblem, MatrixDrift, solve_are_dense


def _scalar_provider(c_val=1.0):
    one = np.array([[1.0]])
    return CoefficientProvider(
        m=lambda t: one, a=lambda t: np.array([[0.0]]),
        b=lambda t: one, c=lambda t: np.array([[c_val]]),
        mdot=lambda t: np.array([[0.0]]))


def test_mdot_linear():
    mfun = lambda t: t * np.eye(3)
    Md = mdot_centered(mfun, 0.5, 0.05)
    np.testing.assert_allclose(np.asarray(Md), np.eye(3), atol=1e-12)


def test_mdot_constant():
    Md = mdot_centered(lambda t: np.eye(2), 0.3, 0.1)
    assert np.abs(np.asarray(Md)).max() <= 1e-14


def test_mdot_quadratic_exact():
    Md = mdot_centered(lambda t: t * t * np.eye(2), 0.5, 0.1)
    np.testing.assert_allclose(np.asarray(Md), 1.0 * np.eye(2), atol=1e-12)


def test_mdot_one_sided_at_ends():
    mfun = lambda t: t * np.eye(1)
    Md = mdot_centered(mfun, 0.0, 0.1, t_min=0.0, t_max=1.0)
    np.testing.assert_allclose(np.asarray(Md), [[1.0]], atol=1e-12)
    Md = mdot_centered(mfun, 1.0, 0.1, t_min=0.0, t_max=1.0)
    np.testing.assert_allclose(np.asarray(Md), [[1.0]], atol=1e-12)


def test_single_bdf1_step_scalar():
    provider = _scalar_provider()
    coeffs = BdfCoefficients.for_order(1)
    sol, K = bdf_step(provider, 0.9, 0.1, coeffs, [LowRankLDL.zero(1)],
                      lam=1.0, tol=1e-12)
    x = ldl_to_dense(sol.X)[0, 0]
    expected = (-1.0 + np.sqrt(1.04)) / 0.2
    assert abs(x - expected) <= 1e-10
    assert abs(K[0, 0] - x) <= 1e-10


def test_zero_output_keeps_everything_zero():
    provider = _scalar_provider(c_val=0.0)
    schedule = bdf_solve(provider, TimeGridPair.uniform(1.0, 10), p=1,
                         lam=1.0)
    for K in schedule.gains:
        assert np.abs(K).max() == 0.0


def _tanh_max_error(n_steps, p):
    provider = _scalar_provider()
    grids = TimeGridPair.uniform(1.0, n_steps)
    schedule = bdf_solve(provider, grids, p=p, lam=1.0, tol=1e-11,
                         store_factors=True)
    err = 0.0
    for t, X in zip(schedule.times, schedule.factors):
        x = ldl_to_dense(X)[0, 0] if X.rank else 0.0
        err = max(err, abs(x - np.tanh(1.0 - t)))
    return err


def test_tanh_bdf1_accuracy_and_order():
    errs = {n: _tanh_max_error(n, 1) for n in (100, 200, 400)}
    assert errs[400] <= 2e-3
    slopes = [np.log2(errs[100] / errs[200]), np.log2(errs[200] / errs[400])]
    for s in slopes:
        assert 0.8 <= s <= 1.2


def test_tanh_bdf2_order():
    errs = {n: _tanh_max_error(n, 2) for n in (50, 100, 200)}
    slopes = [np.log2(errs[50] / errs[100]), np.log2(errs[100] / errs[200])]
    for s in slopes:
        assert 1.7 <= s <= 2.3


def test_terminal_gain_is_zero():
    provider = _scalar_provider()
    schedule = bdf_solve(provider, TimeGridPair.uniform(1.0, 20), p=1,
                         lam=1.0)
    assert np.abs(schedule.gains[-1]).max() == 0.0
    assert schedule.times[-1] == 1.0


def test_grid_reversal():
    g = TimeGridPair.uniform(1.0, 7)
    np.testing.assert_array_equal(g.t_bwd[::-1], g.t_fwd)
    assert g.t_bwd[0] == 1.0 and g.t_bwd[-1] == 0.0


def test_gain_at_grid_point_bitwise():
    times = np.array([0.0, 0.5, 1.0])
    gains = [np.full((1, 2), v) for v in (1.0, 2.0, 3.0)]
    s = GainSchedule(times, gains)
    assert gain_at(s, 0.5) is gains[1]


def test_gain_at_midpoint():
    s = GainSchedule(np.array([0.0, 1.0]),
                     [np.zeros((2, 2)), 2.0 * np.eye(2)])
    np.testing.assert_array_equal(gain_at(s, 0.5), np.eye(2))


def test_gain_at_random_matches_two_point_formula():
    rng = np.random.default_rng(30)
    times = np.sort(rng.uniform(0, 1, 5))
    gains = [rng.standard_normal((2, 3)) for _ in times]
    s = GainSchedule(times, gains)
    t = 0.5 * (times[2] + times[3])
    w = (t - times[2]) / (times[3] - times[2])
    np.testing.assert_allclose(gain_at(s, t),
                               (1 - w) * gains[2] + w * gains[3], rtol=1e-14)


def test_gain_extrapolation_rejected():
    s = GainSchedule(np.array([0.0, 1.0]), [np.eye(1), np.eye(1)])
    with pytest.raises(ValueError):
        gain_at(s, 1.5)


def _random_autonomous_provider(n, seed):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((n, n))
    F = -(G @ G.T) - n * np.eye(n)
    E = np.eye(n)
    B = rng.standard_normal((n, 1))
    C = rng.standard_normal((2, n))
    provider = CoefficientProvider(
        m=lambda t: E, a=lambda t: F, b=lambda t: B, c=lambda t: C,
        mdot=lambda t: np.zeros((n, n)))
    return provider, (E, F, B, C)


def test_lowrank_march_matches_dense_bdf():
    n, n_steps = 4, 12
    provider, (E, F, B, C) = _random_autonomous_provider(n, 31)
    grids = TimeGridPair.uniform(1.0, n_steps)
    schedule = bdf_solve(provider, grids, p=1, lam=1.0, tol=1e-12,
                         store_factors=True)

    # dense reference: same per-step ARE solved by the dense oracle
    tau = 1.0 / n_steps
    X = np.zeros((n, n))
    dense_traj = {1.0: X.copy()}
    for t in grids.t_bwd[1:]:
        Q = tau * (C.T @ C) + X        # E = I: the history term is X_{k-1}
        drift = MatrixDrift(tau * F - 0.5 * np.eye(n))
        prob = AreProblem(E=sp.identity(n, format="csr"), drift=drift,
                          B=np.sqrt(tau) * B, C=np.eye(n), S=Q)
        X = solve_are_dense(prob, tol=1e-13)
        dense_traj[round(t, 12)] = X.copy()

    for t, Xf in zip(schedule.times, schedule.factors):
        Xd = dense_traj[round(t, 12)]
        scale = max(np.abs(Xd).max(), 1e-30)
        assert np.abs(ldl_to_dense(Xf) - Xd).max() <= 1e-8 * scale
