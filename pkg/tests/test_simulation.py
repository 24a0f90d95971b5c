import dataclasses
import json
import math

import numpy as np
import pytest

from dapigrid.control import CommGraph, DgController
from dapigrid.errors import (ConvergenceTimeout, TopologyError, ValidationError)
from dapigrid.metrics import state_metrics
from dapigrid.network import Bus, Line, NetworkModel, make_network
from dapigrid.powerflow import injections_nonlinear
from dapigrid.scenario import parse_scenario_text
from dapigrid.simulation import (Event, SystemState, Trajectory, bus_outputs,
                                 closed_loop_rhs, final_configuration,
                                 flat_start, format_event, integrate,
                                 steady_state, write_events_log)

W_STAR = 2 * math.pi * 50


def ctrl(**kw):
    base = dict(m=2.5e-3, n=1.5e-3, k=1.7, kappa=1.0, beta=0.0,
                omega_star=W_STAR, e_star=325.3, p_star=1400.0, q_star=800.0)
    base.update(kw)
    return DgController(**base)


def tiny_doc(t_end=2.0, events=(), loads=True, beta=0.0, b_weight=5.0):
    c = dict(m=2.5e-3, n=1.5e-3, k=1.7, kappa=1.0, beta=beta,
             omega_star=W_STAR, e_star=325.3, p_star=1400.0, q_star=800.0)
    buses = [{"id": 1}, {"id": 2}]
    if loads:
        buses[0]["load"] = {"conductance": 2e-3, "susceptance": 1e-3}
    return {
        "name": "tiny",
        "network": {"buses": buses, "lines": [{"from": 1, "to": 2, "x": 0.8}]},
        "controllers": [dict(bus=1, **c), dict(bus=2, **c)],
        "comm": {"A": {"matrix": [[0.0, 1.0], [1.0, 0.0]]},
                 "B": {"matrix": [[0.0, b_weight], [b_weight, 0.0]]}},
        "events": list(events),
        "sim": {"t_end": t_end},
    }


def tiny(**kw):
    return parse_scenario_text(json.dumps(tiny_doc(**kw)))


def test_event_validation():
    with pytest.raises(ValidationError):
        Event(1.0, "explode")
    with pytest.raises(ValidationError):
        Event(-1.0, "enable-secondary")
    with pytest.raises(ValidationError) as exc:
        Event(1.0, "load-set", {"bus": 1})
    assert "missing parameter" in str(exc.value)


def test_event_formatting(tmp_path):
    evs = [Event(7.0, "enable-secondary"),
           Event(22.0, "load-set", {"bus": 4, "susceptance": 0.0, "conductance": 0.0}),
           Event(2.0, "comm-link-set", {"layer": "A", "i": 3, "j": 4, "weight": 0.5})]
    assert format_event(evs[0]) == "7.000000 enable-secondary"
    assert format_event(evs[1]) == "22.000000 load-set bus=4 susceptance=0 conductance=0"
    assert format_event(evs[2]) == "2.000000 comm-link-set layer=A i=3 j=4 weight=0.5"
    path = tmp_path / "events.log"
    write_events_log(evs, path)
    assert path.read_text().count("\n") == 3


def test_final_configuration_replays_events():
    scn = tiny(t_end=5.0, events=[
        {"time": 0.5, "kind": "enable-secondary"},
        {"time": 1.0, "kind": "load-set", "bus": 1,
         "susceptance": 0.0, "conductance": 0.0},
        {"time": 2.0, "kind": "comm-link-set", "layer": "B",
         "i": 1, "j": 2, "weight": 9.0},
    ])
    net, ga, gb, secondary = final_configuration(scn)
    assert secondary is True
    assert net.load_vectors()[0].tolist() == [0.0, 0.0]
    assert gb.weights[0, 1] == 9.0
    assert ga.weights[0, 1] == 1.0                    # layer A untouched
    # the scenario's own copies stay at their parsed values
    assert scn.network.load_vectors()[0][0] == 2e-3
    assert scn.graph_b.weights[0, 1] == 5.0

    net0, ga0, gb0, sec0 = final_configuration(tiny(events=[]))
    assert sec0 is False
    assert net0 is not None and ga0.weights[0, 1] == 1.0


def test_flat_start():
    st = flat_start([ctrl(), ctrl(e_star=300.0)])
    assert st.theta.tolist() == [0.0, 0.0]
    assert st.E.tolist() == [325.3, 300.0]
    assert st.Omega.tolist() == [0.0, 0.0]
    assert st.active.all()


def test_rhs_vanishes_on_unloaded_flat_start():
    net = make_network(3, [(0, 1, 0.5), (1, 2, 0.9)])
    ctrls = [ctrl(), ctrl(), ctrl()]
    g = CommGraph(np.zeros((3, 3)))
    dy = closed_loop_rhs(net, ctrls, g, g, flat_start(ctrls), secondary_enabled=True)
    # angle and secondary channels cancel exactly; the reactive channel
    # subtracts two ~1e5 terms and only cancels to roundoff
    assert np.all(dy[:3] == 0.0)
    assert np.all(dy[6:] == 0.0)
    assert np.max(np.abs(dy)) < 1e-12


def test_rhs_matches_hand_formulas():
    net = make_network(2, [(0, 1, 0.5)], g_load=[0.01, 0.0], b_load=[0.0, 0.002])
    ctrls = [ctrl(m=2.5e-3, n=1.5e-3, k=2.0, kappa=2.0, beta=1.5),
             ctrl(m=5.0e-3, n=3.0e-3, k=0.5, kappa=1.0, beta=0.0, q_star=400.0)]
    ga = CommGraph(np.array([[0.0, 3.0], [3.0, 0.0]]))
    gb = CommGraph(np.array([[0.0, 10.0], [10.0, 0.0]]))
    theta = np.array([0.1, 0.0])
    E = np.array([320.0, 330.0])
    Om = np.array([0.5, -0.2])
    ei = np.array([1.0, 2.0])
    st = SystemState(theta, E, Om, ei)

    inj = injections_nonlinear(net, theta, E)
    m = np.array([2.5e-3, 5.0e-3])
    nq = np.array([1.5e-3, 3.0e-3])
    dtheta = Om - m * inj.P
    dE = -(E - 325.3) - nq * inj.Q + ei
    dOm = (m * inj.P - Om - ga.laplacian() @ Om) / np.array([2.0, 0.5])
    ratio = inj.Q / np.array([800.0, 400.0])
    de = (-np.array([1.5, 0.0]) * (E - 325.3) - gb.laplacian() @ ratio) / np.array([2.0, 1.0])

    dy = closed_loop_rhs(net, ctrls, ga, gb, st, secondary_enabled=True)
    assert np.allclose(dy, np.concatenate([dtheta, dE, dOm, de]), rtol=1e-13)

    froz = closed_loop_rhs(net, ctrls, ga, gb, st, secondary_enabled=False)
    assert np.allclose(froz[:4], np.concatenate([dtheta, dE]), rtol=1e-13)
    assert np.all(froz[4:] == 0.0)

    slow = closed_loop_rhs(net, ctrls, ga, gb, st, secondary_enabled=True, tau_e=2.0)
    assert np.allclose(slow[2:4], dE / 2.0, rtol=1e-13)


def test_rhs_requires_connected_active_network():
    net = NetworkModel((Bus(0), Bus(1), Bus(2)),
                       (Line(0, 1, 0.5), Line(1, 2, 0.5, in_service=False)))
    ctrls = [ctrl()] * 3
    g = CommGraph(np.zeros((3, 3)))
    with pytest.raises(TopologyError):
        closed_loop_rhs(net, ctrls, g, g, flat_start(ctrls), secondary_enabled=False)


def test_bus_outputs_structure():
    scn = tiny()
    st = flat_start(scn.controllers)
    st.active[1] = False
    fz, E, P, Q, Om, ei = bus_outputs(scn.network, scn.controllers, scn.graph_a,
                                      scn.graph_b, st)
    assert np.isnan(fz[1]) and np.isnan(E[1]) and np.isnan(Q[1])
    assert np.isfinite(fz[0])


def test_integrate_rows_and_event_duplication():
    scn = tiny(t_end=2.0, events=[{"time": 1.0, "kind": "enable-secondary"}])
    traj = integrate(scn)
    # 201 grid samples plus one duplicated event row
    assert traj.t.size == 202
    at_ev = np.flatnonzero(traj.t == 1.0)
    assert at_ev.size == 2
    # secondary states stay frozen before activation, move afterwards
    assert np.all(traj.Omega[traj.t < 1.0] == 0.0)
    assert np.any(traj.Omega[-1] != 0.0)
    assert traj.t[0] == 0.0 and traj.t[-1] == 2.0
    assert traj.events[0].kind == "enable-secondary"


def test_integrate_is_deterministic(tmp_path):
    scn = tiny(t_end=1.5, events=[{"time": 0.5, "kind": "enable-secondary"}])
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    integrate(scn).to_csv(p1)
    integrate(scn).to_csv(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_trajectory_csv_round_trip(tmp_path):
    scn = tiny(t_end=0.5)
    traj = integrate(scn)
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    header = path.read_text().splitlines()[0]
    assert header.startswith("t,omega_1[Hz],omega_2[Hz],E_1[V]")
    assert header.endswith("e_1,e_2")
    back = Trajectory.from_csv(path)
    for a, b in [(traj.t, back.t), (traj.omega_hz, back.omega_hz),
                 (traj.Q, back.Q), (traj.e, back.e)]:
        assert np.array_equal(a, b)  # %.17g survives the round trip bit-exactly


def test_integrate_zero_horizon():
    scn = tiny(t_end=0.0)
    traj = integrate(scn)
    assert traj.t.size == 1
    assert traj.t[0] == 0.0


def test_unloaded_idle_scenario_holds_flat():
    # nothing injects power and nothing switches, so the flat profile is an
    # exact equilibrium and every sampled signal stays on its first row
    traj = integrate(tiny(loads=False, t_end=1.0))
    assert traj.t.size > 10
    for name in ("omega_hz", "E", "P", "Q", "Omega", "e"):
        arr = getattr(traj, name)
        assert np.array_equal(arr, np.broadcast_to(arr[0], arr.shape)), name
    assert traj.omega_hz[0].tolist() == [50.0, 50.0]
    assert traj.E[0].tolist() == [325.3, 325.3]


def three_bus_doc(events, t_end=6.0):
    c = dict(m=2.5e-3, n=1.5e-3, k=1.7, kappa=1.0, beta=0.0,
             omega_star=W_STAR, e_star=325.3, p_star=1400.0, q_star=800.0)
    return parse_scenario_text(json.dumps({
        "network": {
            "buses": [{"id": 1, "load": {"conductance": 2e-3}}, {"id": 2}, {"id": 3}],
            "lines": [{"from": 1, "to": 2, "x": 0.8}, {"from": 2, "to": 3, "x": 0.6}],
        },
        "controllers": [dict(bus=i, **c) for i in (1, 2, 3)],
        "comm": {"A": {"topology": "ring", "weight": 1.0},
                 "B": {"topology": "ring", "weight": 5.0}},
        "events": events,
        "sim": {"t_end": t_end},
    }))


def test_plug_out_and_in_round_trip():
    scn = three_bus_doc([
        {"time": 0.0, "kind": "enable-secondary"},
        {"time": 1.0, "kind": "dg-plug-out", "bus": 2},
        {"time": 4.0, "kind": "dg-plug-in", "bus": 2},
    ])
    traj = integrate(scn)
    down = (traj.t > 1.0) & (traj.t < 4.0)
    assert np.all(np.isnan(traj.omega_hz[down, 1]))
    assert np.all(np.isnan(traj.Q[down, 1]))
    assert np.all(np.isfinite(traj.omega_hz[down, 0]))
    # re-entry restores a live signal at the voltage setpoint
    back = traj.t > 4.0
    assert np.all(np.isfinite(traj.E[back, 1]))
    i_post = np.flatnonzero(traj.t == 4.0)[-1]
    assert traj.E[i_post, 1] == 325.3
    assert traj.Omega[i_post, 1] == 0.0


def test_plug_events_validate_runtime_state():
    with pytest.raises(ValidationError) as exc:
        integrate(three_bus_doc([
            {"time": 1.0, "kind": "dg-plug-out", "bus": 2},
            {"time": 2.0, "kind": "load-set", "bus": 2,
             "susceptance": 1e-3, "conductance": 0.0}]))
    assert "inactive" in str(exc.value)

    with pytest.raises(ValidationError) as exc:
        integrate(three_bus_doc([
            {"time": 1.0, "kind": "load-set", "bus": 2,
             "susceptance": 1e-3, "conductance": 0.0},
            {"time": 2.0, "kind": "dg-plug-out", "bus": 2}]))
    assert "load" in str(exc.value)

    with pytest.raises(ValidationError) as exc:
        integrate(three_bus_doc([
            {"time": 1.0, "kind": "dg-plug-out", "bus": 2},
            {"time": 2.0, "kind": "dg-plug-out", "bus": 2}]))
    assert "already inactive" in str(exc.value)

    with pytest.raises(ValidationError) as exc:
        integrate(three_bus_doc([
            {"time": 1.0, "kind": "dg-plug-in", "bus": 2}]))
    assert "already active" in str(exc.value)


def test_unit_downtime_keeps_regulation(bundled):
    # between plug-out and plug-in the surviving three units must still hold
    # frequency and sharing; the judgement has to use the reduced
    # configuration that final_configuration reports
    full = bundled("study4")
    cut = dataclasses.replace(
        full, events=tuple(ev for ev in full.events if ev.kind != "dg-plug-in"))
    state = steady_state(cut)
    net, graph_a, graph_b, secondary = final_configuration(cut)
    assert secondary
    assert state.active.tolist() == [True, True, False, True]
    mt = state_metrics(net, full.controllers, graph_a, graph_b, state,
                       tau_e=full.sim.tau_e)
    assert mt.frequency_deviation_hz < 1e-3
    assert mt.p_spread_rel < 0.005
    assert mt.q_spread < 0.005


def test_steady_state_converges_and_certifies():
    scn = tiny(t_end=2.0, beta=2.2, b_weight=0.0,
               events=[{"time": 0.0, "kind": "enable-secondary"}])
    st = steady_state(scn, tol=1e-9)
    dy = closed_loop_rhs(scn.network, scn.controllers, scn.graph_a, scn.graph_b,
                         st, secondary_enabled=True)
    n = scn.n
    dth = dy[:n] - dy[:n].mean()
    assert max(np.abs(dth).max(), np.abs(dy[n:]).max()) < 1e-7
    # voltage regulation pins both magnitudes at the setpoint
    assert np.allclose(st.E, 325.3, atol=1e-6)


def test_steady_state_timeout():
    scn = tiny(t_end=2.0)
    with pytest.raises(ConvergenceTimeout) as exc:
        steady_state(scn, tol=1e-16, horizon=4.0)
    assert exc.value.time >= 4.0
    assert exc.value.residual > 0.0


def test_steady_state_warm_start():
    scn = tiny(t_end=2.0, beta=2.2, b_weight=0.0,
               events=[{"time": 0.0, "kind": "enable-secondary"}])
    first = steady_state(scn, tol=1e-9)
    again = steady_state(scn, tol=1e-9, initial=first)
    # already settled: one window certifies it
    assert again.t <= first.t + 2.0 + 1e-9
    assert np.allclose(again.E, first.E, atol=1e-9)
