import numpy as np
import pytest

from stefanlqr import io as sio
from stefanlqr.dre_bdf import GainSchedule
from stefanlqr.pipeline import ClosedLoopResult
from stefanlqr.stefan_sim import SimConfig, simulate_reference, steady_field


@pytest.fixture(scope="module")
def tiny_traj():
    base = SimConfig()
    field, _ = steady_field(base)
    cfg = SimConfig(nx=4, ny=6, n_t=5, tau_min=1e-3, tau_max=0.2,
                    initial_field=field)
    return cfg, simulate_reference(cfg)


def test_format_float_round_trips():
    for x in (0.1, 1.0 / 3.0, 1e-17, -1.2345678901234567e38, 2.5e-3,
              np.nextafter(1.0, 2.0)):
        assert float(sio.format_float(x)) == x


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.standard_normal((7, 3))
    path = tmp_path / "x.csv"
    sio.write_csv(path, ["a [m]", "b [s]", "c [-]"], data)
    header, back = sio.read_csv(path)
    assert header == ["a [m]", "b [s]", "c [-]"]
    np.testing.assert_array_equal(back, data)


def test_trajectory_round_trip(tmp_path, tiny_traj):
    cfg, traj = tiny_traj
    path = tmp_path / "traj.dat"
    sio.save_trajectory(path, traj)
    back = sio.load_trajectory(path, cfg)
    np.testing.assert_array_equal(back.times, traj.times)
    np.testing.assert_array_equal(back.taus, traj.taus)
    np.testing.assert_array_equal(np.asarray(back.controls),
                                  np.asarray(traj.controls))
    np.testing.assert_array_equal(np.asarray(back.vertices),
                                  np.asarray(traj.vertices))
    np.testing.assert_array_equal(np.asarray(back.thetas),
                                  np.asarray(traj.thetas))
    # the reconstructed meshes work
    assert back.mesh_at(2).n_triangles == traj.base_mesh.n_triangles


def test_truncated_file_rejected(tmp_path, tiny_traj):
    cfg, traj = tiny_traj
    path = tmp_path / "traj.dat"
    sio.save_trajectory(path, traj)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(sio.PersistenceError):
        sio.load_trajectory(path, cfg)


def test_corrupted_value_rejected(tmp_path, tiny_traj):
    cfg, traj = tiny_traj
    path = tmp_path / "traj.dat"
    sio.save_trajectory(path, traj)
    text = path.read_text().replace("0.2", "0.3", 1)
    path.write_text(text)
    with pytest.raises(sio.PersistenceError):
        sio.load_trajectory(path, cfg)


def test_wrong_kind_rejected(tmp_path):
    gains = GainSchedule(times=np.array([0.0, 1.0]),
                         gains=[np.zeros((1, 3)), np.ones((1, 3))])
    path = tmp_path / "g.dat"
    sio.save_gain_schedule(path, gains)
    with pytest.raises(sio.PersistenceError):
        sio._read_checked(path, "trajectory")


def test_mesh_mismatch_rejected(tmp_path, tiny_traj):
    cfg, traj = tiny_traj
    path = tmp_path / "traj.dat"
    sio.save_trajectory(path, traj)
    from dataclasses import replace
    with pytest.raises(sio.PersistenceError):
        sio.load_trajectory(path, replace(cfg, nx=5))


def test_gain_schedule_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    times = np.linspace(0.0, 1.0, 6)
    gains = GainSchedule(times=times,
                         gains=[rng.standard_normal((2, 9)) for _ in times])
    path = tmp_path / "gains.dat"
    sio.save_gain_schedule(path, gains)
    back = sio.load_gain_schedule(path)
    np.testing.assert_array_equal(back.times, times)
    for A, B in zip(back.gains, gains.gains):
        np.testing.assert_array_equal(A, B)


def test_reference_series_shape(tiny_traj):
    cfg, traj = tiny_traj
    header, rows = sio.reference_series(traj, cfg)
    assert len(rows) == len(traj.times)
    assert all(len(r) == len(header) for r in rows)
    assert header[0].startswith("t ")


def _synthetic_result():
    from stefanlqr.mesh import InterfaceDeviation
    times = np.array([0.0, 0.5, 1.0])
    dev = [InterfaceDeviation(t=times[k], x_star=0.1 * k,
                              gamma_delta=0.01 * k) for k in range(3)]
    return ClosedLoopResult(
        times=times, taus=np.diff(times),
        u_delta=np.zeros((3, 1)), u_total=np.ones((2, 6)),
        y=np.zeros((3, 2)), y_desired=np.zeros((3, 2)),
        x_delta=[None] * 3, deviations=dev,
        interface_heights=np.zeros((3, 5)), trajectory=None)


def test_closed_loop_series_shape(tmp_path):
    result = _synthetic_result()
    header, rows = sio.closed_loop_series(result)
    assert len(rows) == 3
    assert all(len(r) == len(header) for r in rows)
    assert header[-1] == "interface_gamma_delta [length]"
    path = tmp_path / "cl.csv"
    sio.write_csv(path, header, rows)
    _, back = sio.read_csv(path)
    assert back[2, -1] == 0.02
