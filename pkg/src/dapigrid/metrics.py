"""Steady-state quality metrics.

Everything here is a pure function of recorded signals plus controller
constants, so any metric printed by the CLI can be recomputed offline
from trajectory.csv alone. Inactive units (NaN columns) are excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .control import gain_vector
from .simulation import TWO_PI, Trajectory, bus_outputs


@dataclass(frozen=True)
class SteadyMetrics:
    frequency_deviation_hz: float   # max_i |f_i - f*|
    p_spread: float                 # max_ij |m_i P_i - m_j P_j|
    p_spread_rel: float             # p_spread / mean(m_i P_i)
    q_spread: float                 # max_ij |Q_i/Q_i* - Q_j/Q_j*|
    voltage_spread: float           # max_i |E_i - E*|


def _span(values: np.ndarray) -> float:
    vals = values[np.isfinite(values)]
    if vals.size == 0:
        return math.nan
    return float(vals.max() - vals.min())


def row_metrics(ctrls, omega_hz, E, P, Q) -> SteadyMetrics:
    m = gain_vector(ctrls, "m")
    q_star = gain_vector(ctrls, "q_star")
    e_star = gain_vector(ctrls, "e_star")
    f_star = gain_vector(ctrls, "omega_star") / TWO_PI
    fdev = np.abs(np.asarray(omega_hz) - f_star)
    fdev = float(np.nanmax(fdev)) if np.any(np.isfinite(fdev)) else math.nan
    mp = m * np.asarray(P)
    p_spread = _span(mp)
    mp_mean = float(np.nanmean(mp)) if np.any(np.isfinite(mp)) else math.nan
    if math.isfinite(mp_mean) and mp_mean != 0.0:
        p_rel = p_spread / abs(mp_mean)
    else:
        p_rel = math.nan
    q_spread = _span(np.asarray(Q) / q_star)
    ev = np.abs(np.asarray(E) - e_star)
    vspread = float(np.nanmax(ev)) if np.any(np.isfinite(ev)) else math.nan
    return SteadyMetrics(frequency_deviation_hz=fdev, p_spread=p_spread,
                         p_spread_rel=p_rel, q_spread=q_spread,
                         voltage_spread=vspread)


def trajectory_metrics(ctrls, traj: Trajectory, index: int = -1) -> SteadyMetrics:
    return row_metrics(ctrls, traj.omega_hz[index], traj.E[index],
                       traj.P[index], traj.Q[index])


def state_metrics(net, ctrls, graph_a, graph_b, state, tau_e: float = 1.0) -> SteadyMetrics:
    omega_hz, E, P, Q, _, _ = bus_outputs(net, ctrls, graph_a, graph_b, state,
                                          tau_e=tau_e)
    return row_metrics(ctrls, E=E, P=P, Q=Q, omega_hz=omega_hz)


def checkpoint_indices(traj: Trajectory) -> list[int]:
    """Sample indices where settled behavior should be judged.

    The pre-event row of every load change after the integral channels come
    online, plus the final row. Scenarios without load events contribute
    just the final row.
    """
    enabled_at = None
    for ev in traj.events:
        if ev.kind == "enable-secondary":
            enabled_at = ev.time
            break
    out = []
    if enabled_at is not None:
        for ev in traj.events:
            if ev.kind != "load-set" or ev.time <= enabled_at:
                continue
            hits = np.flatnonzero(traj.t == ev.time)
            if hits.size:
                out.append(int(hits[0]))          # pre-event row
            else:
                before = np.flatnonzero(traj.t < ev.time)
                if before.size:
                    out.append(int(before[-1]))
    out.append(traj.t.size - 1)
    return out
