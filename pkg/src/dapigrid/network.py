"""Electrical topology: generator buses, inductive lines, collocated loads.

The model is lossless. Lines carry only a reactance in the power flow;
resistances are retained on the Line record for documentation but never
enter any matrix. Loads are constant-impedance shunts attached at the
generator buses, stored as nonnegative conductance/susceptance pairs.

Sign conventions for the derived matrices:

* ``Y_bus`` has +1/X_ij off the diagonal for each in-service line and
  diagonal entries equal to minus the row sum, so its rows sum to zero.
* ``Y_load`` is diagonal with entries ``-b_load_i`` (an inductive shunt
  has negative signed susceptance).
* ``-(Y_bus + Y_load)`` is then positive semidefinite: a weighted graph
  Laplacian plus nonnegative shunt terms. Analysis code builds on that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ParameterError, TopologyError


@dataclass(frozen=True)
class Bus:
    """One generator bus with an optional collocated constant-impedance load.

    ``g_load``/``b_load`` are the load conductance and (unsigned)
    susceptance in siemens; both zero means no load attached.
    """

    index: int
    g_load: float = 0.0
    b_load: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.g_load) and math.isfinite(self.b_load)):
            raise ParameterError("load terms must be finite", field=f"bus {self.index}")
        if self.g_load < 0 or self.b_load < 0:
            raise ParameterError("load terms must be nonnegative", field=f"bus {self.index}")


@dataclass(frozen=True)
class Line:
    """An inductive line between buses ``i`` and ``j`` (0-based positions).

    ``r`` is carried for record keeping only; the flow model is lossless.
    """

    i: int
    j: int
    x: float
    r: float = 0.0
    in_service: bool = True

    def __post_init__(self):
        if self.i == self.j:
            raise ParameterError("line endpoints must differ", field=f"line ({self.i},{self.j})")
        if not (self.x > 0 and math.isfinite(self.x)):
            raise ParameterError("line reactance must be positive", field=f"line ({self.i},{self.j})")
        if self.r < 0:
            raise ParameterError("line resistance must be nonnegative", field=f"line ({self.i},{self.j})")


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]

    def __post_init__(self):
        n = len(self.buses)
        if n < 2:
            raise ParameterError("a network needs at least 2 buses")
        seen = set()
        for ln in self.lines:
            if not (0 <= ln.i < n and 0 <= ln.j < n):
                raise TopologyError(f"line ({ln.i},{ln.j}) references a missing bus")
            key = (min(ln.i, ln.j), max(ln.i, ln.j))
            if key in seen:
                raise TopologyError(f"duplicate line between buses {key[0]} and {key[1]}")
            seen.add(key)

    @property
    def n(self) -> int:
        return len(self.buses)

    def load_vectors(self) -> tuple[np.ndarray, np.ndarray]:
        g = np.array([b.g_load for b in self.buses], dtype=float)
        b = np.array([b.b_load for b in self.buses], dtype=float)
        return g, b

    def with_load(self, bus: int, g: float, b: float) -> "NetworkModel":
        """Return a copy with bus ``bus``'s load replaced (event application)."""
        buses = list(self.buses)
        buses[bus] = replace(buses[bus], g_load=g, b_load=b)
        return NetworkModel(tuple(buses), self.lines)


def make_network(n: int, lines: Sequence[tuple[int, int, float]],
                 g_load: Sequence[float] | None = None,
                 b_load: Sequence[float] | None = None) -> NetworkModel:
    """Convenience constructor from (i, j, x) triples and load vectors."""
    g = g_load if g_load is not None else [0.0] * n
    b = b_load if b_load is not None else [0.0] * n
    buses = tuple(Bus(i, g[i], b[i]) for i in range(n))
    return NetworkModel(buses, tuple(Line(i, j, x) for i, j, x in lines))


def line_susceptance_graph(net: NetworkModel) -> np.ndarray:
    """Symmetric matrix of line susceptances 1/X_ij over in-service lines."""
    a = np.zeros((net.n, net.n))
    for ln in net.lines:
        if ln.in_service:
            a[ln.i, ln.j] += 1.0 / ln.x
            a[ln.j, ln.i] += 1.0 / ln.x
    return a


def _components(adj: np.ndarray) -> list[list[int]]:
    n = adj.shape[0]
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in range(n):
                if adj[v, w] > 0 and not seen[w]:
                    seen[w] = True
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def electrical_connectivity(net: NetworkModel, active: Sequence[bool] | None = None) -> bool:
    """True iff all active buses lie in one component of the in-service line graph.

    Inactive buses may still serve as through-paths: a generator that has
    dropped out leaves its bus as a passive node, and power can flow across
    it. A single active bus is trivially connected.
    """
    a = line_susceptance_graph(net)
    act = np.ones(net.n, bool) if active is None else np.asarray(active, bool)
    idx = np.flatnonzero(act)
    if len(idx) <= 1:
        return True
    comps = _components(a)
    for comp in comps:
        if idx[0] in comp:
            return all(i in comp for i in idx)
    return False


def build_susceptance_matrices(net: NetworkModel) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (Y_bus, Y_load) from the in-service lines and the stored loads.

    Raises TopologyError naming the components if the line graph is
    disconnected.
    """
    a = line_susceptance_graph(net)
    comps = _components(a)
    if len(comps) > 1:
        raise TopologyError("electrical graph is disconnected; components: "
                            + ", ".join(str(c) for c in comps))
    y_bus = a - np.diag(a.sum(axis=1))
    _, b_load = net.load_vectors()
    y_load = np.diag(-b_load)
    return y_bus, y_load


def eliminate_passive_buses(a: np.ndarray, active: Sequence[bool]) -> np.ndarray:
    """Star-mesh elimination of inactive buses from a susceptance graph.

    Each passive node v with star weights y_vp is replaced by mesh edges
    y_vp * y_vq / sum_k y_vk between all neighbor pairs (p, q). This is the
    exact reduction for a pure susceptance network with no shunt at v, so
    callers must ensure eliminated buses carry no load. Rows and columns of
    eliminated buses are zeroed in the returned copy.
    """
    a = np.array(a, dtype=float)
    act = np.asarray(active, bool)
    for v in np.flatnonzero(~act):
        w = a[:, v].copy()
        d = w.sum()
        if d > 0:
            a += np.outer(w, w) / d
        a[v, :] = 0.0
        a[:, v] = 0.0
        np.fill_diagonal(a, 0.0)
    return a
