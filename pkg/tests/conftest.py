"""Shared fixtures.

Steady states and gain sweeps are expensive (seconds to minutes), so they
are computed once per session and shared between the unit and acceptance
layers through the caching fixtures below.
"""

import pytest

from dapigrid.metrics import state_metrics
from dapigrid.scenario import load_bundled_scenario
from dapigrid.simulation import final_configuration, steady_state


@pytest.fixture(scope="session")
def bundled():
    cache = {}

    def load(name):
        if name not in cache:
            cache[name] = load_bundled_scenario(name)
        return cache[name]

    return load


@pytest.fixture(scope="session")
def steady_of(bundled):
    """steady_of(name, **kw) -> SystemState, memoized on (name, kwargs)."""
    cache = {}

    def get(name, **kw):
        key = (name, tuple(sorted(kw.items())))
        if key not in cache:
            cache[key] = steady_state(bundled(name), **kw)
        return cache[key]

    return get


@pytest.fixture(scope="session")
def metrics_of(bundled, steady_of):
    cache = {}

    def get(name):
        if name not in cache:
            s = bundled(name)
            net, ga, gb, _ = final_configuration(s)
            cache[name] = state_metrics(net, s.controllers, ga, gb,
                                        steady_of(name), tau_e=s.sim.tau_e)
        return cache[name]

    return get
