"""Droop laws, the two distributed-averaging integral controllers, and the
communication layer (weighted adjacency, Laplacian, consensus dynamics).

Two independent communication graphs are used: layer A couples the
frequency-restoring integrators, layer B couples the per-unit reactive
power ratios. Layer weights may be asymmetric only when a graph is built
in directed mode (leader-follower voltage tunings); in that mode the
consensus sum-preservation property does not hold and is not asserted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ParameterError, ValidationError


@dataclass(frozen=True)
class DgController:
    """Per-generator gains, setpoints and ratings.

    m, n        frequency and voltage droop coefficients
    k, kappa    integrator time constants of the two secondary channels
    beta        local voltage-regulation gain (zero allowed)
    omega_star  nominal angular frequency, rad/s
    e_star      nominal voltage magnitude, volts
    p_star, q_star  power ratings used for sharing metrics and per-unit scaling
    """

    m: float
    n: float
    k: float
    kappa: float
    beta: float
    omega_star: float
    e_star: float
    p_star: float
    q_star: float

    def __post_init__(self):
        for name in ("m", "n", "k", "kappa", "omega_star", "e_star", "p_star", "q_star"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be positive", field="controller")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ParameterError("beta must be nonnegative", field="controller")


class CommGraph:
    """Weighted communication graph over the generator indices.

    Weights are nonnegative with a zero diagonal. Undirected graphs (the
    default) must have symmetric weights.
    """

    def __init__(self, weights, directed: bool = False):
        w = np.array(weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("weight matrix must be square", field="comm")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative", field="comm")
        if np.any(np.diag(w) != 0):
            raise ValidationError("diagonal weights must be zero", field="comm")
        if not directed and not np.array_equal(w, w.T):
            raise ValidationError("undirected graph requires symmetric weights", field="comm")
        self.weights = w
        self.directed = directed

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def laplacian(self) -> np.ndarray:
        # rows sum to zero exactly: same floating sum on diagonal and row
        rs = self.weights.sum(axis=1)
        return np.diag(rs) - self.weights

    def subgraph(self, idx: Sequence[int]) -> "CommGraph":
        idx = np.asarray(idx, int)
        return CommGraph(self.weights[np.ix_(idx, idx)], directed=self.directed)

    def with_link(self, i: int, j: int, weight: float) -> "CommGraph":
        """Return a copy with the (i, j) channel set in both directions."""
        w = self.weights.copy()
        w[i, j] = weight
        w[j, i] = weight
        return CommGraph(w, directed=self.directed)

    def __eq__(self, other):
        return (isinstance(other, CommGraph) and self.directed == other.directed
                and np.array_equal(self.weights, other.weights))


def consensus_rhs(graph: CommGraph, x: Sequence[float]) -> np.ndarray:
    """Averaging dynamics xdot = -L x; zero exactly on componentwise-constant x."""
    return -graph.laplacian() @ np.asarray(x, float)


def connectivity(graph: CommGraph) -> bool:
    """True iff positive weights, taken as undirected edges, connect all nodes."""
    n = graph.n
    if n <= 1:
        return True
    adj = (graph.weights > 0) | (graph.weights.T > 0)
    seen = np.zeros(n, bool)
    stack = [0]
    seen[0] = True
    while stack:
        v = stack.pop()
        for w in np.flatnonzero(adj[v]):
            if not seen[w]:
                seen[w] = True
                stack.append(int(w))
    return bool(seen.all())


def droop_frequency(ctrl: DgController, p: float, big_omega: float = 0.0) -> float:
    """Frequency command w* - m P + Omega; Omega = 0 is plain droop."""
    return ctrl.omega_star - ctrl.m * p + big_omega


def droop_voltage(ctrl: DgController, q: float, e: float = 0.0) -> float:
    """Voltage command E* - n Q + e; e = 0 is plain droop."""
    return ctrl.e_star - ctrl.n * q + e


def gain_vector(controllers: Sequence[DgController], name: str) -> np.ndarray:
    return np.array([getattr(c, name) for c in controllers], dtype=float)


def dapi_frequency_rhs(controllers: Sequence[DgController], graph_a: CommGraph,
                       omega: Sequence[float], big_omega: Sequence[float]) -> np.ndarray:
    """Integral channel of the frequency loop.

    k_i dOmega_i/dt = -(w_i - w*) - sum_j a_ij (Omega_i - Omega_j)
    """
    omega = np.asarray(omega, float)
    big_omega = np.asarray(big_omega, float)
    k = gain_vector(controllers, "k")
    w_star = gain_vector(controllers, "omega_star")
    return (-(omega - w_star) - graph_a.laplacian() @ big_omega) / k


def dapi_voltage_rhs(controllers: Sequence[DgController], graph_b: CommGraph,
                     E: Sequence[float], q: Sequence[float], e: Sequence[float]) -> np.ndarray:
    """Integral channel of the voltage loop.

    kappa_i de_i/dt = -beta_i (E_i - E*) - sum_j b_ij (Q_i/Q_i* - Q_j/Q_j*)

    With beta = 0 and a connected layer the equilibria are exactly the
    proportional reactive-sharing configurations; with zero weights and
    beta > 0 each generator pins its own voltage to E*.
    """
    E = np.asarray(E, float)
    q = np.asarray(q, float)
    e = np.asarray(e, float)
    kappa = gain_vector(controllers, "kappa")
    beta = gain_vector(controllers, "beta")
    e_star = gain_vector(controllers, "e_star")
    q_star = gain_vector(controllers, "q_star")
    ratio = q / q_star
    return (-beta * (E - e_star) - graph_b.laplacian() @ ratio) / kappa
