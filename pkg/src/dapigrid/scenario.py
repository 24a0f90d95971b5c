"""Scenario files: parsing, validation, canonical serialization.

A scenario is a single JSON document with network, controllers, comm,
events, sim and optional analysis sections. Parsing is strict: unknown
keys are rejected and every violation is reported with its field path.
Named comm topologies (ring/chain/complete) expand to explicit matrices
so that a serialized scenario is self-contained; parse -> serialize ->
parse is an identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import CommGraph, DgController
from .errors import ScenarioParseError, ValidationError
from .network import Bus, Line, NetworkModel
from .simulation import EVENT_PARAMS, Event

GAIN_NAMES = ("k", "kappa", "beta", "b")

BUNDLED_SCENARIOS = ("study1a", "study1b", "study1c", "study1d",
                     "study2", "study3", "study4", "parallel2")


@dataclass(frozen=True)
class SimSettings:
    t_end: float
    rtol: float = 1e-13
    atol: float = 1e-13
    sample_rate_hz: float = 100.0
    tau_e: float = 1.0
    steady_horizon: float = 600.0


@dataclass(frozen=True)
class SweepSpec:
    gain: str
    lo: float
    hi: float
    points: int


@dataclass
class Scenario:
    name: str
    network: NetworkModel
    controllers: tuple
    graph_a: CommGraph
    graph_b: CommGraph
    events: tuple
    sim: SimSettings
    analysis: SweepSpec | None = None

    @property
    def n(self) -> int:
        return self.network.n

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return canonical_dict(self) == canonical_dict(other)


def _check_keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        raise ValidationError("expected an object", field=path)
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise ValidationError(f"unknown key(s): {', '.join(unknown)}", field=path)
    missing = [k for k in required if k not in obj]
    if missing:
        raise ValidationError(f"missing key(s): {', '.join(missing)}", field=path)


def _number(obj, key, path, *, positive=False, nonnegative=False, default=None):
    if key not in obj:
        if default is not None:
            return float(default)
        raise ValidationError("missing value", field=f"{path}.{key}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError("expected a number", field=f"{path}.{key}")
    v = float(v)
    if not np.isfinite(v):
        raise ValidationError("must be finite", field=f"{path}.{key}")
    if positive and v <= 0:
        raise ValidationError("must be positive", field=f"{path}.{key}")
    if nonnegative and v < 0:
        raise ValidationError("must be nonnegative", field=f"{path}.{key}")
    return v


def _integer(obj, key, path, *, minimum=None):
    if key not in obj:
        raise ValidationError("missing value", field=f"{path}.{key}")
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError("expected an integer", field=f"{path}.{key}")
    if minimum is not None and v < minimum:
        raise ValidationError(f"must be >= {minimum}", field=f"{path}.{key}")
    return v


def _parse_network(doc, path="network"):
    _check_keys(doc, path, ("buses", "lines"))
    buses_doc = doc["buses"]
    if not isinstance(buses_doc, list) or not buses_doc:
        raise ValidationError("expected a nonempty list", field=f"{path}.buses")
    n = len(buses_doc)
    buses = []
    for i, bd in enumerate(buses_doc):
        bpath = f"{path}.buses[{i}]"
        _check_keys(bd, bpath, ("id",), ("load",))
        bus_id = _integer(bd, "id", bpath, minimum=1)
        if bus_id != i + 1:
            raise ValidationError(
                f"bus ids must be 1..{n} in increasing order (got {bus_id})",
                field=f"{bpath}.id")
        g = b = 0.0
        if "load" in bd:
            lpath = f"{bpath}.load"
            _check_keys(bd["load"], lpath, (), ("conductance", "susceptance"))
            g = _number(bd["load"], "conductance", lpath, nonnegative=True, default=0.0)
            b = _number(bd["load"], "susceptance", lpath, nonnegative=True, default=0.0)
        buses.append(Bus(index=i, g_load=g, b_load=b))
    lines_doc = doc["lines"]
    if not isinstance(lines_doc, list):
        raise ValidationError("expected a list", field=f"{path}.lines")
    return buses, lines_doc, n


def _parse_lines(lines_doc, n, omega_star, path="network.lines"):
    lines = []
    for i, ld in enumerate(lines_doc):
        lpath = f"{path}[{i}]"
        _check_keys(ld, lpath, ("from", "to"), ("x", "l", "r"))
        u = _integer(ld, "from", lpath, minimum=1)
        v = _integer(ld, "to", lpath, minimum=1)
        if u > n or v > n:
            raise ValidationError(f"bus id out of range 1..{n}", field=lpath)
        if u == v:
            raise ValidationError("line endpoints must differ", field=lpath)
        if ("x" in ld) == ("l" in ld):
            raise ValidationError("specify exactly one of x (ohm) or l (henry)",
                                  field=lpath)
        if "x" in ld:
            x = _number(ld, "x", lpath, positive=True)
        else:
            x = omega_star * _number(ld, "l", lpath, positive=True)
        r = _number(ld, "r", lpath, nonnegative=True, default=0.0)
        lines.append(Line(i=u - 1, j=v - 1, x=x, r=r))
    return lines


_CTRL_KEYS = ("bus", "m", "n", "k", "kappa", "beta", "omega_star", "e_star",
              "p_star", "q_star")


def _parse_controllers(doc, n, path="controllers"):
    if not isinstance(doc, list):
        raise ValidationError("expected a list", field=path)
    if len(doc) != n:
        raise ValidationError(f"expected exactly {n} controllers (one per bus)",
                              field=path)
    ctrls = []
    for i, cd in enumerate(doc):
        cpath = f"{path}[{i}]"
        _check_keys(cd, cpath, _CTRL_KEYS)
        bus_id = _integer(cd, "bus", cpath, minimum=1)
        if bus_id != i + 1:
            raise ValidationError(
                f"controllers must be listed by bus 1..{n} in order (got {bus_id})",
                field=f"{cpath}.bus")
        try:
            ctrls.append(DgController(
                m=_number(cd, "m", cpath, positive=True),
                n=_number(cd, "n", cpath, positive=True),
                k=_number(cd, "k", cpath, positive=True),
                kappa=_number(cd, "kappa", cpath, positive=True),
                beta=_number(cd, "beta", cpath, nonnegative=True),
                omega_star=_number(cd, "omega_star", cpath, positive=True),
                e_star=_number(cd, "e_star", cpath, positive=True),
                p_star=_number(cd, "p_star", cpath, positive=True),
                q_star=_number(cd, "q_star", cpath, positive=True)))
        except ValidationError as exc:
            raise ValidationError(str(exc), field=cpath) from None
    omegas = {c.omega_star for c in ctrls}
    if len(omegas) > 1:
        raise ValidationError("all controllers must share one omega_star",
                              field=f"{path}[*].omega_star")
    return tuple(ctrls)


def _topology_matrix(kind, n, weight):
    w = np.zeros((n, n))
    if kind == "complete":
        w[:] = weight
        np.fill_diagonal(w, 0.0)
        return w
    for i in range(n - 1):
        w[i, i + 1] = w[i + 1, i] = weight
    if kind == "ring" and n > 2:
        w[0, n - 1] = w[n - 1, 0] = weight
    return w


def _parse_comm_layer(doc, n, path):
    _check_keys(doc, path, (), ("topology", "weight", "matrix", "directed"))
    if ("topology" in doc) == ("matrix" in doc):
        raise ValidationError("specify exactly one of topology or matrix", field=path)
    directed = doc.get("directed", False)
    if not isinstance(directed, bool):
        raise ValidationError("expected a boolean", field=f"{path}.directed")
    if "topology" in doc:
        kind = doc["topology"]
        if kind not in ("ring", "chain", "complete"):
            raise ValidationError(f"unknown topology {kind!r}",
                                  field=f"{path}.topology")
        if directed:
            raise ValidationError("named topologies are undirected", field=path)
        weight = _number(doc, "weight", path, nonnegative=True, default=1.0)
        return CommGraph(_topology_matrix(kind, n, weight), directed=False)
    mat = doc["matrix"]
    if (not isinstance(mat, list) or len(mat) != n
            or any(not isinstance(r, list) or len(r) != n for r in mat)):
        raise ValidationError(f"expected an {n}x{n} matrix", field=f"{path}.matrix")
    w = np.zeros((n, n))
    for i, row in enumerate(mat):
        for j, v in enumerate(row):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ValidationError("expected a number",
                                      field=f"{path}.matrix[{i}][{j}]")
            if v < 0 or not np.isfinite(v):
                raise ValidationError("weights must be finite and nonnegative",
                                      field=f"{path}.matrix[{i}][{j}]")
            w[i, j] = v
    if np.any(np.diag(w) != 0.0):
        raise ValidationError("diagonal must be zero", field=f"{path}.matrix")
    if not directed and not np.array_equal(w, w.T):
        raise ValidationError("matrix must be symmetric unless directed=true",
                              field=f"{path}.matrix")
    return CommGraph(w, directed=directed)


_EVENT_KEY_TYPES = {"bus": int, "i": int, "j": int, "layer": str,
                    "weight": float, "susceptance": float, "conductance": float}


def _parse_events(doc, n, t_end, path="events"):
    if not isinstance(doc, list):
        raise ValidationError("expected a list", field=path)
    events = []
    last_time = -1.0
    last_kind = None
    for i, ed in enumerate(doc):
        epath = f"{path}[{i}]"
        if not isinstance(ed, dict):
            raise ValidationError("expected an object", field=epath)
        kind = ed.get("kind")
        if kind not in EVENT_PARAMS:
            raise ValidationError(f"unknown event kind {kind!r}", field=f"{epath}.kind")
        _check_keys(ed, epath, ("time", "kind") + EVENT_PARAMS[kind])
        time = _number(ed, "time", epath, nonnegative=True)
        if time > t_end:
            raise ValidationError("event time exceeds sim.t_end",
                                  field=f"{epath}.time")
        if time < last_time:
            raise ValidationError("events must be sorted by time",
                                  field=f"{epath}.time")
        if time == last_time and kind != last_kind:
            raise ValidationError(
                "simultaneous events must share one kind (ordering is undefined "
                "otherwise)", field=f"{epath}.time")
        last_time, last_kind = time, kind
        params = {}
        for key in EVENT_PARAMS[kind]:
            want = _EVENT_KEY_TYPES[key]
            if want is int:
                params[key] = _integer(ed, key, epath, minimum=1)
                if key in ("bus", "i", "j") and params[key] > n:
                    raise ValidationError(f"bus id out of range 1..{n}",
                                          field=f"{epath}.{key}")
            elif want is float:
                params[key] = _number(ed, key, epath, nonnegative=True)
            else:
                if ed.get(key) not in ("A", "B"):
                    raise ValidationError("layer must be 'A' or 'B'",
                                          field=f"{epath}.{key}")
                params[key] = ed[key]
        if kind == "comm-link-set" and params["i"] == params["j"]:
            raise ValidationError("link endpoints must differ", field=epath)
        events.append(Event(time=time, kind=kind, params=params))
    return tuple(events)


def _parse_sim(doc, path="sim"):
    _check_keys(doc, path, ("t_end",),
                ("rtol", "atol", "sample_rate_hz", "tau_e", "steady_horizon"))
    return SimSettings(
        t_end=_number(doc, "t_end", path, nonnegative=True),
        rtol=_number(doc, "rtol", path, positive=True, default=1e-13),
        atol=_number(doc, "atol", path, positive=True, default=1e-13),
        sample_rate_hz=_number(doc, "sample_rate_hz", path, positive=True,
                               default=100.0),
        tau_e=_number(doc, "tau_e", path, positive=True, default=1.0),
        steady_horizon=_number(doc, "steady_horizon", path, positive=True,
                               default=600.0))


def _parse_analysis(doc, path="analysis"):
    _check_keys(doc, path, ("gain", "from", "to", "points"))
    gain = doc.get("gain")
    if gain not in GAIN_NAMES:
        raise ValidationError(f"gain must be one of {', '.join(GAIN_NAMES)}",
                              field=f"{path}.gain")
    lo = _number(doc, "from", path, positive=True)
    hi = _number(doc, "to", path, positive=True)
    if hi <= lo:
        raise ValidationError("'to' must exceed 'from'", field=f"{path}.to")
    points = _integer(doc, "points", path, minimum=2)
    return SweepSpec(gain=gain, lo=lo, hi=hi, points=points)


def parse_scenario_text(text: str, name: str = "scenario") -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, dict):
        raise ValidationError("top level must be an object", field="$")
    _check_keys(doc, "$", ("network", "controllers", "comm", "sim"),
                ("name", "events", "analysis"))
    if "name" in doc:
        if not isinstance(doc["name"], str):
            raise ValidationError("expected a string", field="name")
        name = doc["name"]
    buses, lines_doc, n = _parse_network(doc["network"])
    ctrls = _parse_controllers(doc["controllers"], n)
    omega_star = ctrls[0].omega_star
    lines = _parse_lines(lines_doc, n, omega_star)
    net = NetworkModel(buses=tuple(buses), lines=tuple(lines))
    comm = doc["comm"]
    _check_keys(comm, "comm", ("A", "B"))
    graph_a = _parse_comm_layer(comm["A"], n, "comm.A")
    graph_b = _parse_comm_layer(comm["B"], n, "comm.B")
    sim = _parse_sim(doc["sim"])
    events = _parse_events(doc.get("events", []), n, sim.t_end)
    analysis = _parse_analysis(doc["analysis"]) if "analysis" in doc else None
    return Scenario(name=name, network=net, controllers=ctrls, graph_a=graph_a,
                    graph_b=graph_b, events=events, sim=sim, analysis=analysis)


def parse_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise ScenarioParseError(f"scenario file not found: {path}")
    return parse_scenario_text(path.read_text(), name=path.stem)


def canonical_dict(scn: Scenario) -> dict:
    net = scn.network
    buses = [{"id": b.index + 1,
              "load": {"conductance": b.g_load, "susceptance": b.b_load}}
             for b in net.buses]
    lines = [{"from": ln.i + 1, "to": ln.j + 1, "x": ln.x, "r": ln.r}
             for ln in net.lines]
    ctrls = [{"bus": i + 1, "m": c.m, "n": c.n, "k": c.k, "kappa": c.kappa,
              "beta": c.beta, "omega_star": c.omega_star, "e_star": c.e_star,
              "p_star": c.p_star, "q_star": c.q_star}
             for i, c in enumerate(scn.controllers)]

    def layer(g: CommGraph) -> dict:
        return {"matrix": [[float(v) for v in row] for row in g.weights],
                "directed": bool(g.directed)}

    events = []
    for ev in scn.events:
        ed = {"time": ev.time, "kind": ev.kind}
        for key in EVENT_PARAMS[ev.kind]:
            ed[key] = ev.params[key]
        events.append(ed)
    out = {
        "name": scn.name,
        "network": {"buses": buses, "lines": lines},
        "controllers": ctrls,
        "comm": {"A": layer(scn.graph_a), "B": layer(scn.graph_b)},
        "events": events,
        "sim": {"t_end": scn.sim.t_end, "rtol": scn.sim.rtol,
                "atol": scn.sim.atol, "sample_rate_hz": scn.sim.sample_rate_hz,
                "tau_e": scn.sim.tau_e, "steady_horizon": scn.sim.steady_horizon},
    }
    if scn.analysis is not None:
        out["analysis"] = {"gain": scn.analysis.gain, "from": scn.analysis.lo,
                           "to": scn.analysis.hi, "points": scn.analysis.points}
    return out


def serialize_scenario(scn: Scenario) -> str:
    return json.dumps(canonical_dict(scn), indent=2) + "\n"


def bundled_scenario_path(name: str) -> Path:
    from importlib.resources import files
    if name not in BUNDLED_SCENARIOS:
        raise ValidationError(
            f"unknown bundled scenario {name!r}; available: "
            f"{', '.join(BUNDLED_SCENARIOS)}")
    return Path(str(files("dapigrid").joinpath("scenarios", f"{name}.json")))


def load_bundled_scenario(name: str) -> Scenario:
    return parse_scenario(bundled_scenario_path(name))
