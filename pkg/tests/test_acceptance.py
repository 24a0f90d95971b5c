"""Acceptance gate.

One test per shipped guarantee, named so `pytest -v` emits one line per
criterion. Steady states are shared through the session fixtures in
conftest; the sweep-based criterion dominates the runtime.
"""

import math
import time
from dataclasses import fields, replace

import numpy as np
import pytest

from dapigrid.analysis import (build_linear_voltage_system,
                               check_stability_conditions, damping_ratio,
                               dominant_complex_pair, dominant_real_mode,
                               eigen_trace, follow_eigenvalue, jacobian_full,
                               min_damping_pair, multiset_distance,
                               pencil_eigenvalues, refine_equilibrium,
                               sort_spectrum)
from dapigrid.control import CommGraph
from dapigrid.eigensolvers import (eigen_residuals, general_eigenvalues,
                                   symmetric_eigh)
from dapigrid.metrics import SteadyMetrics, state_metrics
from dapigrid.powerflow import droop_steady_frequency
from dapigrid.scenario import BUNDLED_SCENARIOS
from dapigrid.simulation import (Event, bus_outputs, final_configuration,
                                 steady_state)

SECONDARY_STUDIES = ("study1a", "study1b", "study1c", "study1d",
                     "study2", "study3", "study4")

F_TOL_HZ = 1e-3          # frequency restoration band
SHARE_TOL = 5e-3         # active-power sharing spread, relative


def outputs_of(scn, state):
    net, ga, gb, _ = final_configuration(scn)
    return bus_outputs(net, scn.controllers, ga, gb, state, tau_e=scn.sim.tau_e)


def metrics_at(scn, state):
    net, ga, gb, _ = final_configuration(scn)
    return state_metrics(net, scn.controllers, ga, gb, state,
                         tau_e=scn.sim.tau_e)


def assert_sharing_invariants(met, label):
    assert met.frequency_deviation_hz < F_TOL_HZ, label
    assert met.p_spread_rel < SHARE_TOL, label


def assert_metrics_agree(a, b, tol, label):
    for f in fields(SteadyMetrics):
        x, y = getattr(a, f.name), getattr(b, f.name)
        if math.isnan(x) and math.isnan(y):
            continue        # metric undefined in both runs (no P scale)
        assert abs(x - y) <= tol * max(abs(x), abs(y), 1.0), \
            f"{label}: {f.name} {x!r} vs {y!r}"


def test_criterion_01_droop_only_frequency(bundled):
    scn = replace(bundled("study1a"), events=(), name="droop-only")
    t0 = time.perf_counter()
    state = steady_state(scn)
    elapsed = time.perf_counter() - t0
    omega_hz, E = outputs_of(scn, state)[:2]
    g = scn.network.load_vectors()[0]
    # supplied = -consumed; prediction uses only voltages and loads, so
    # agreement certifies droop law + equal sharing + lossless balance
    p_net = -float(np.sum(g * np.asarray(E) ** 2))
    w_pred = droop_steady_frequency(scn.controllers, p_net)
    w_meas = 2 * math.pi * np.asarray(omega_hz)
    assert np.max(np.abs(w_meas - w_pred)) <= 1e-6 * abs(w_pred)
    assert w_pred < scn.controllers[0].omega_star   # loaded net runs under
    assert elapsed < 5.0


def test_criterion_02_sharing_held_across_load_events(bundled, steady_of,
                                                      metrics_of):
    for name in SECONDARY_STUDIES:
        scn = bundled(name)
        t_on = min(ev.time for ev in scn.events
                   if ev.kind == "enable-secondary")
        cuts = [ev for ev in scn.events
                if ev.kind == "load-set" and ev.time > t_on]
        # the equilibrium of every load configuration the study passes
        # through after activation, ending with the full event list
        for cut in cuts:
            part = replace(scn, name=f"{name}<{cut.time:g}",
                           events=tuple(ev for ev in scn.events
                                        if ev.time < cut.time))
            assert_sharing_invariants(metrics_at(part, steady_state(part)),
                                      part.name)
        assert_sharing_invariants(metrics_of(name), name)


def test_criterion_03_sharing_priority_design(metrics_of):
    a, b = metrics_of("study1a"), metrics_of("study1b")
    assert a.q_spread < 5e-3
    assert a.voltage_spread >= 10.0 * b.voltage_spread


def test_criterion_04_regulation_priority_design(metrics_of):
    a, b = metrics_of("study1a"), metrics_of("study1b")
    assert b.voltage_spread < 0.05
    assert b.q_spread >= 10.0 * a.q_spread


def test_criterion_05_mixed_designs_interpolate(metrics_of):
    a, b = metrics_of("study1a"), metrics_of("study1b")
    c, d = metrics_of("study1c"), metrics_of("study1d")
    for mid in (c, d):
        assert a.q_spread < mid.q_spread < b.q_spread
        assert b.voltage_spread < mid.voltage_spread < a.voltage_spread
    assert d.q_spread < c.q_spread


def test_criterion_06_parallel_unit_sharing(bundled):
    base = bundled("parallel2")
    q0 = outputs_of(base, steady_state(base))[3]
    assert q0[0] < q0[1]                      # primary: uneven by line+load

    enable = (Event(0.0, "enable-secondary"),)
    reg = replace(base, name="parallel2-regulation", events=enable,
                  controllers=tuple(replace(c, beta=2.2)
                                    for c in base.controllers))
    q2 = outputs_of(reg, steady_state(reg))[3]
    assert q2[0] < q0[0] and q2[1] > q0[1]    # regulation widens the gap

    share = replace(base, name="parallel2-consensus", events=enable,
                    graph_b=CommGraph(np.array([[0.0, 50.0], [50.0, 0.0]])))
    q1 = outputs_of(share, steady_state(share))[3]
    assert abs(q1[0] - q1[1]) <= 1e-3 * 0.5 * (q1[0] + q1[1])


def rand_conn_graph(rng, nn, wfun):
    g = np.zeros((nn, nn))
    for v in range(1, nn):
        u = int(rng.integers(0, v))
        g[u, v] = g[v, u] = wfun()
    for _ in range(int(rng.integers(0, nn))):
        u, v = rng.integers(0, nn, 2)
        if u != v and g[u, v] == 0:
            g[u, v] = g[v, u] = wfun()
    return g


def test_criterion_07_certificate_implies_stability(bundled):
    s = bundled("study1c")
    rep = check_stability_conditions(
        build_linear_voltage_system(s.network, s.controllers, s.graph_b))
    assert rep.w1_condition and rep.w2_condition
    assert float(np.max(rep.eigenvalues.real)) < 0.0

    # randomized admissible designs around the reference parameter space;
    # admission = both symmetric-part conditions clear a scaled margin
    rng = np.random.default_rng(0)
    admitted = 0
    worst = -np.inf
    while admitted < 1000:
        nn = int(rng.integers(2, 5))
        a = rand_conn_graph(rng, nn, lambda: 1 / rng.uniform(0.3, 2.0))
        bl = rng.uniform(0, 0.01, nn) * (rng.random(nn) < 0.5)
        Y = np.diag(a.sum(axis=1)) - a + np.diag(bl)
        nqr = rng.uniform(1e-3, 4e-3, nn)
        es = np.full(nn, 325.3)
        qs = rng.uniform(400, 800, nn)
        kpp = np.full(nn, rng.uniform(0.5, 2.0))
        bet = rng.uniform(0, 5, nn) * (rng.random(nn) < 0.8)
        bs = rng.uniform(0, 250)
        bw = rand_conn_graph(rng, nn, lambda: bs)
        W1 = np.eye(nn) + np.diag(nqr * es) @ Y
        Lc = np.diag(bw.sum(axis=1)) - bw
        W2 = np.diag(1 / kpp) @ (np.diag(bet) + Lc @ np.diag(es / qs) @ Y)
        ok = True
        for block in (W1, W2):
            w, _ = symmetric_eigh(block + block.T)
            if w[0] <= 1e-6 * max(abs(w[0]), abs(w[-1])):
                ok = False
        if not ok:
            continue
        admitted += 1
        W = np.zeros((2 * nn, 2 * nn))
        W[:nn, :nn] = -W1
        W[:nn, nn:] = np.eye(nn)
        W[nn:, :nn] = -W2
        worst = max(worst, float(np.max(general_eigenvalues(W).real)))
    assert admitted == 1000
    assert worst < 0.0


def test_criterion_08_pencil_route_agrees(bundled):
    for name in BUNDLED_SCENARIOS:
        s = bundled(name)
        sys = build_linear_voltage_system(s.network, s.controllers, s.graph_b)
        direct = sort_spectrum(general_eigenvalues(sys.W))
        pencil = pencil_eigenvalues(sys.W1, sys.W2)
        assert multiset_distance(direct, pencil) < 1e-6, name


def test_criterion_09_gain_sweep_trends(bundled):
    s = bundled("study1c")

    tk = eigen_trace(s, "k")
    assert tk.warnings == [] and tk.grid.size == 13
    mag = [abs(dominant_real_mode(row)) for row in tk.eigenvalues]
    assert np.all(np.diff(mag) < 0.0)         # slower recovery, monotone

    tkap = eigen_trace(s, "kappa")
    assert tkap.warnings == [] and tkap.grid.size == 13
    path = follow_eigenvalue(tkap, dominant_complex_pair(tkap.eigenvalues[0]))
    assert abs(path[0].imag) > 1.0            # starts oscillatory
    assert abs(path[-1].imag) < 1e-9          # overdamped at large kappa

    for gain in ("b", "beta"):
        tr = eigen_trace(s, gain)
        assert tr.warnings == [] and tr.grid.size == 13
        zeta = [damping_ratio(min_damping_pair(row))
                for row in tr.eigenvalues]
        assert np.all(np.diff(zeta) < 0.0), gain


def test_criterion_10_redundancy_and_replug(metrics_of):
    ref = metrics_of("study1d")
    for name in ("study2", "study3"):
        assert_metrics_agree(metrics_of(name), ref, 1e-6, name)
    assert_sharing_invariants(metrics_of("study4"), "study4")


def test_criterion_11_numerical_robustness(bundled, steady_of, metrics_of):
    for name in BUNDLED_SCENARIOS:
        scn = bundled(name)
        halved = metrics_at(scn, steady_of(name, rtol=5e-14, atol=5e-14))
        assert_metrics_agree(metrics_of(name), halved, 1e-8, name)

    for name in BUNDLED_SCENARIOS:
        scn = bundled(name)
        sys = build_linear_voltage_system(scn.network, scn.controllers,
                                          scn.graph_b)
        eigs = general_eigenvalues(sys.W)
        res = eigen_residuals(sys.W, eigs)
        assert np.max(res) < 1e-8 * np.linalg.norm(sys.W, 2), name

    scn = bundled("study1c")
    op = refine_equilibrium(scn.network, scn.controllers, scn.graph_a,
                            scn.graph_b,
                            steady_of("study1c", tol=1e-10, rtol=5e-14,
                                      atol=5e-14))
    jac = jacobian_full(scn.network, scn.controllers, scn.graph_a,
                        scn.graph_b, op)
    eigs = general_eigenvalues(jac)
    assert np.max(eigen_residuals(jac, eigs)) < 1e-8 * np.linalg.norm(jac, 2)
