"""Rendering of recorded trajectories and eigenvalue traces to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import ScenarioParseError
from .simulation import Trajectory

# per-unit color order, cycles for larger systems
_COLORS = ("tab:blue", "tab:red", "tab:green", "tab:brown")

_SIGNALS = (
    ("omega_hz", "f [Hz]", "frequency.png"),
    ("E", "E [V]", "voltage.png"),
    ("P", "P [W]", "active_power.png"),
    ("Q", "Q [VAr]", "reactive_power.png"),
    ("Omega", "Omega [rad/s]", "secondary_frequency.png"),
    ("e", "e [V]", "secondary_voltage.png"),
)


def _event_times(out_dir: Path) -> list[float]:
    log = out_dir / "events.log"
    if not log.is_file():
        return []
    times = []
    for line in log.read_text().splitlines():
        tok = line.split()
        if tok:
            times.append(float(tok[0]))
    return times


def _plot_signal(t, y, ylabel, path, marks):
    fig, ax = plt.subplots(figsize=(7.0, 3.2))
    for i in range(y.shape[1]):
        ax.plot(t, y[:, i], color=_COLORS[i % len(_COLORS)], lw=1.2,
                label=f"DG {i + 1}")
    for mark in marks:
        ax.axvline(mark, color="0.6", ls="--", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    if y.shape[1] <= 8:
        ax.legend(loc="best", fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def _plot_trace(path_csv: Path, path_png: Path):
    with open(path_csv) as fh:
        header = fh.readline()
        rows = [[float(v) for v in line.strip().split(",")]
                for line in fh if line.strip()]
    fig, ax = plt.subplots(figsize=(5.2, 4.4))
    if rows:
        arr = np.asarray(rows)
        gains = arr[:, 0]
        re = arr[:, 1::2]
        im = arr[:, 2::2]
        sc = None
        for row in range(arr.shape[0]):
            sc = ax.scatter(re[row], im[row], s=14, marker="x",
                            c=np.full(re.shape[1], gains[row]),
                            vmin=gains.min(), vmax=gains.max(), cmap="viridis")
        if sc is not None:
            fig.colorbar(sc, ax=ax, label="gain value")
    ax.axvline(0.0, color="0.7", lw=0.8)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    fig.tight_layout()
    fig.savefig(path_png, dpi=130)
    plt.close(fig)


def emit_plots(out_dir) -> list[Path]:
    """Render every known CSV in out_dir; returns the written image paths."""
    out = Path(out_dir)
    traj_csv = out / "trajectory.csv"
    trace_csv = out / "trace.csv"
    if not traj_csv.is_file() and not trace_csv.is_file():
        raise ScenarioParseError(f"nothing to plot in {out} "
                                 "(no trajectory.csv or trace.csv)")
    written: list[Path] = []
    if traj_csv.is_file():
        traj = Trajectory.from_csv(traj_csv)
        marks = _event_times(out)
        for attr, ylabel, fname in _SIGNALS:
            target = out / fname
            _plot_signal(traj.t, getattr(traj, attr), ylabel, target, marks)
            written.append(target)
    if trace_csv.is_file():
        target = out / "eigenvalues.png"
        _plot_trace(trace_csv, target)
        written.append(target)
    return written
