"""Text persistence: CSV time series and checksummed state files.

All floating point values are written with ``repr``, i.e. the shortest
decimal string that round-trips to the same IEEE double, so reading a file
back reproduces the arrays bit for bit.  The binary-ish state files
(trajectories, gain schedules) carry a version line and a trailing sha256
checksum; a truncated or edited file fails to load.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import replace

import numpy as np

from .dre_bdf import GainSchedule
from .stefan_sim import SimConfig, Trajectory

FORMAT_VERSION = 1


class PersistenceError(IOError):
    """Corrupt, truncated, or incompatible data file."""


def format_float(x) -> str:
    """Shortest decimal representation that round-trips the double."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# CSV time series
# ---------------------------------------------------------------------------

def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([c if isinstance(c, str) else format_float(c)
                             for c in row])


def read_csv(path):
    """Return (header, float ndarray) for a file written by write_csv."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = [[float(c) for c in row] for row in reader]
    return header, np.asarray(data, dtype=float)


def reference_series(traj: Trajectory, cfg: SimConfig):
    """Header and rows for the feedforward reference trajectory.

    Columns: time, accepted step size, the feedforward heating flux per
    input segment, the mean interface height, and the desired height.
    The step-size and control columns describe the step that starts at the
    row's time; the final row repeats the last step's values.
    """
    controls = np.asarray(traj.controls, dtype=float)
    taus = np.asarray(traj.taus, dtype=float)
    heights = traj.interface_heights()
    header = (["t [time]", "tau [time]"]
              + [f"u_{k + 1} [heat flux]" for k in range(controls.shape[1])]
              + ["interface_height [length]", "desired_height [length]"])
    rows = []
    for i, t in enumerate(traj.times):
        j = min(i, len(taus) - 1)
        rows.append([t, taus[j], *controls[j],
                     heights[i], cfg.desired_height_at(t)])
    return header, rows


def closed_loop_series(result):
    """Header and rows for a feedback run (`ClosedLoopResult`).

    Columns: time, step size, feedback controls, total (reference plus
    feedback) heating flux per segment, measured and desired outputs, and
    the worst interface deviation with the position where it occurs.
    """
    n_fb = result.u_delta.shape[1]
    n_seg = result.u_total.shape[1] if result.u_total.size else 0
    n_out = result.y.shape[1] if result.y.ndim == 2 else 0
    header = (["t [time]", "tau [time]"]
              + [f"u_delta_{k + 1} [heat flux]" for k in range(n_fb)]
              + [f"u_total_{k + 1} [heat flux]" for k in range(n_seg)]
              + [f"y_{k + 1} [temperature]" for k in range(n_out)]
              + [f"y_desired_{k + 1} [temperature]" for k in range(n_out)]
              + ["interface_x_star [length]",
                 "interface_gamma_delta [length]"])
    taus = np.asarray(result.taus, dtype=float)
    rows = []
    for i, t in enumerate(result.times):
        j = min(i, len(taus) - 1)
        u_tot = result.u_total[j] if n_seg else []
        dev = result.deviations[i]
        rows.append([t, taus[j], *result.u_delta[i], *u_tot,
                     *result.y[i], *result.y_desired[i],
                     dev.x_star, dev.gamma_delta])
    return header, rows


# ---------------------------------------------------------------------------
# Checksummed state files
# ---------------------------------------------------------------------------

def _write_checked(path, kind: str, sections: dict):
    """Write named float arrays as text with a trailing sha256 line."""
    lines = [f"# stefanlqr-{kind} v{FORMAT_VERSION}\n"]
    for name, arr in sections.items():
        arr = np.asarray(arr, dtype=float)
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"array {name} {shape}\n")
        for value in arr.ravel():
            lines.append(format_float(value) + "\n")
    body = "".join(lines).encode("utf-8")
    digest = hashlib.sha256(body).hexdigest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(f"checksum {digest}\n".encode("utf-8"))


def _read_checked(path, kind: str) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    text = raw.decode("utf-8")
    lines = text.splitlines()
    if not lines or not lines[-1].startswith("checksum "):
        raise PersistenceError(f"{path}: missing checksum (truncated file?)")
    body = text[:text.rindex("checksum ")].encode("utf-8")
    stated = lines[-1].split()[1]
    if hashlib.sha256(body).hexdigest() != stated:
        raise PersistenceError(f"{path}: checksum mismatch (corrupt file)")
    head = f"# stefanlqr-{kind} v{FORMAT_VERSION}"
    if lines[0] != head:
        raise PersistenceError(
            f"{path}: expected header {head!r}, found {lines[0]!r}")
    sections = {}
    i = 1
    while i < len(lines) - 1:
        parts = lines[i].split()
        if parts[0] != "array":
            raise PersistenceError(f"{path}: malformed section at line {i}")
        name = parts[1]
        shape = tuple(int(s) for s in parts[2:])
        count = int(np.prod(shape)) if shape else 1
        vals = np.array([float(v) for v in lines[i + 1:i + 1 + count]],
                        dtype=float)
        if vals.size != count:
            raise PersistenceError(f"{path}: section {name} truncated")
        sections[name] = vals.reshape(shape)
        i += 1 + count
    return sections


def save_trajectory(path, traj: Trajectory):
    """Persist a simulated trajectory losslessly as checksummed text."""
    _write_checked(path, "trajectory", {
        "times": np.asarray(traj.times),
        "taus": np.asarray(traj.taus),
        "controls": np.asarray(traj.controls),
        "vertices": np.asarray(traj.vertices),
        "thetas": np.asarray(traj.thetas),
    })


def load_trajectory(path, cfg: SimConfig) -> Trajectory:
    """Rebuild a trajectory saved by :func:`save_trajectory`.

    The mesh topology is reconstructed from ``cfg``, which must match the
    configuration the trajectory was produced with.
    """
    data = _read_checked(path, "trajectory")
    base = cfg.build_mesh()
    verts = data["vertices"]
    if verts.shape[1:] != base.vertices.shape:
        raise PersistenceError(
            "trajectory file does not match the configured mesh "
            f"({verts.shape[1:]} vs {base.vertices.shape})")
    return Trajectory(
        base_mesh=replace(base, vertices=verts[0]),
        times=list(data["times"]),
        vertices=[v for v in verts],
        thetas=[th for th in data["thetas"]],
        controls=[u for u in data["controls"]],
        taus=list(data["taus"]))


def save_gain_schedule(path, gains: GainSchedule):
    sections = {"times": np.asarray(gains.times)}
    for k, K in enumerate(gains.gains):
        sections[f"K{k}"] = np.asarray(K)
    _write_checked(path, "gains", sections)


def load_gain_schedule(path) -> GainSchedule:
    data = _read_checked(path, "gains")
    times = data.pop("times")
    mats = [data[f"K{k}"] for k in range(len(data))]
    if len(mats) != times.size:
        raise PersistenceError("gain count does not match time grid")
    return GainSchedule(times=times, gains=mats)
