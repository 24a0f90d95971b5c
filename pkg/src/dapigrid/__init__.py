"""Deterministic droop/DAPI microgrid simulator and small-signal toolkit."""

__version__ = "0.1.0"

from .analysis import (EigenTrace, LinearVoltageSystem, StabilityReport,
                       build_linear_voltage_system, check_stability_conditions,
                       eigen_trace, jacobian_full, pencil_eigenvalues)
from .control import CommGraph, DgController, connectivity, consensus_rhs
from .errors import (ConvergenceTimeout, DapigridError, NumericError,
                     ParameterError, ScenarioParseError, TopologyError,
                     ValidationError)
from .metrics import SteadyMetrics, row_metrics, state_metrics, trajectory_metrics
from .network import (Bus, Line, NetworkModel, build_susceptance_matrices,
                      electrical_connectivity, make_network)
from .powerflow import (droop_steady_frequency, injections_decoupled_reactive,
                        injections_nonlinear)
from .scenario import (BUNDLED_SCENARIOS, Scenario, SimSettings, SweepSpec,
                       bundled_scenario_path, load_bundled_scenario,
                       parse_scenario, parse_scenario_text, serialize_scenario)
from .simulation import (Event, SystemState, Trajectory, closed_loop_rhs,
                         final_configuration, integrate, steady_state)

__all__ = [name for name in dir() if not name.startswith("_")]
