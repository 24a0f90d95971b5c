"""Instantaneous power injections and the droop-only frequency formula."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError
from .network import NetworkModel, line_susceptance_graph


@dataclass(frozen=True)
class Injections:
    """Net active/reactive injections per bus (line export plus local load draw)."""

    P: np.ndarray
    Q: np.ndarray


def injections_from_graph(a: np.ndarray, g_load: np.ndarray, b_load: np.ndarray,
                          theta: np.ndarray, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the lossless flow equations on an explicit susceptance graph.

    P_i = sum_j a_ij E_i E_j sin(th_i - th_j) + g_i E_i^2
    Q_i = E_i^2 sum_j a_ij - sum_j a_ij E_i E_j cos(th_i - th_j) + b_i E_i^2
    """
    dth = theta[:, None] - theta[None, :]
    coupling = a * (E[:, None] * E[None, :])
    p = (coupling * np.sin(dth)).sum(axis=1) + g_load * E * E
    q = E * E * a.sum(axis=1) - (coupling * np.cos(dth)).sum(axis=1) + b_load * E * E
    return p, q


def injections_nonlinear(net: NetworkModel, theta: Sequence[float], E: Sequence[float]) -> Injections:
    theta = np.asarray(theta, float)
    E = np.asarray(E, float)
    if np.any(E <= 0):
        raise ParameterError("voltage magnitudes must be positive")
    a = line_susceptance_graph(net)
    g, b = net.load_vectors()
    p, q = injections_from_graph(a, g, b, theta, E)
    return Injections(P=p, Q=q)


def injections_decoupled_reactive(net: NetworkModel, E: Sequence[float]) -> np.ndarray:
    """Reactive injections with all angle differences frozen at zero.

    Evaluates Q = -E^2 yload - E (Y_bus E); identical to the nonlinear Q
    whenever theta is uniform.
    """
    from .network import build_susceptance_matrices

    E = np.asarray(E, float)
    if np.any(E <= 0):
        raise ParameterError("voltage magnitudes must be positive")
    y_bus, y_load = build_susceptance_matrices(net)
    return -E * E * np.diag(y_load) - E * (y_bus @ E)


def droop_steady_frequency(controllers, p_net: float) -> float:
    """Synchronous frequency of the droop-only network.

    ``p_net`` is the net supplied power with the sign convention that a
    consuming network has p_net < 0, so a loaded system settles below the
    setpoint: w_ss = w* + p_net / sum_i (1/m_i).
    """
    inv_m = sum(1.0 / c.m for c in controllers)
    return controllers[0].omega_star + p_net / inv_m
