"""Report figures for feedback-controlled runs.

Rendered headlessly (Agg backend) to PNG files next to the CSV output.
"""

from __future__ import annotations

import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, outdir, name):
    path = os.path.join(outdir, name)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_controls(outdir, result, uncontrolled=None):
    """Feedback control components and the total heating flux over time."""
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for k in range(result.u_delta.shape[1]):
        ax0.plot(result.times, result.u_delta[:, k],
                 label=f"$u_{{\\Delta,{k + 1}}}$")
    ax0.set_ylabel("feedback control")
    ax0.legend(loc="best", fontsize=8)
    t_mid = 0.5 * (result.times[:-1] + result.times[1:])
    for k in range(result.u_total.shape[1]):
        ax1.step(t_mid, result.u_total[:, k], where="mid", lw=0.8)
    ax1.set_ylabel("total heating flux")
    ax1.set_xlabel("t")
    fig.suptitle("Control inputs")
    return _save(fig, outdir, "controls.png")


def plot_interface_deviation(outdir, result, uncontrolled=None):
    """Worst interface deviation from the reference over time."""
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(result.times, np.abs(result.gamma_delta), label="closed loop")
    if uncontrolled is not None:
        ax.plot(uncontrolled.times, np.abs(uncontrolled.gamma_delta),
                "--", label="uncontrolled")
        ax.legend(loc="best")
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\max_x |\Gamma_\Delta|$")
    ax.set_title("Interface deviation from the reference")
    return _save(fig, outdir, "interface_deviation.png")


def plot_outputs(outdir, result):
    """Measured outputs against the reference outputs."""
    fig, ax = plt.subplots(figsize=(7, 4))
    n_out = result.y.shape[1] if result.y.ndim == 2 else 0
    for k in range(n_out):
        line, = ax.plot(result.times, result.y[:, k], label=f"$y_{k + 1}$")
        ax.plot(result.times, result.y_desired[:, k], "--",
                color=line.get_color(), lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("output (dashed: reference)")
    ax.set_title("Outputs")
    if n_out:
        ax.legend(loc="best", fontsize=8)
    return _save(fig, outdir, "outputs.png")


def plot_timesteps(outdir, result):
    """Accepted step sizes over time (log scale)."""
    fig, ax = plt.subplots(figsize=(7, 3))
    ax.semilogy(result.times[:-1], result.taus, ".", ms=3)
    ax.set_xlabel("t")
    ax.set_ylabel(r"$\tau$")
    ax.set_title("Adaptive step sizes")
    return _save(fig, outdir, "timesteps.png")


def render_report_figures(outdir, result, uncontrolled=None):
    """Render the standard figure set; returns the list of file paths."""
    return [
        plot_controls(outdir, result, uncontrolled),
        plot_interface_deviation(outdir, result, uncontrolled),
        plot_outputs(outdir, result),
        plot_timesteps(outdir, result),
    ]
