"""Transient frequency safety for power networks.

A distributed controller keeps selected bus frequencies inside a safe band
while leaving the steady state untouched. This package simulates the
closed loop over linear or sine-flow swing dynamics and checks the
controller's guarantees on recorded trajectories.
"""
from .controller import (BusController, ControllerConfig, ErrorBounds, FrequencyBand, LinearClassK,
                         TanhClassK, UncertaintyModel, control, control_law, q_value,
                         robust_margin_feasible, smallest_feasible_delta)
from .dynamics import Equilibrium, SystemState, energy, equilibrium, rhs_linear, rhs_nonlinear
from .injections import Constant, InjectionProfile, PiecewiseConstant, SinusoidalWindow
from .network import PowerNetwork, aggregate_flow, build_incidence, read_case, validate
from .presets import preset
from .scenario_io import build, load_scenario
from .simulation import Scenario, simulate, simulate_with_uncertainty
from .trajectory import Trajectory, read_trajectory, write_trajectory
from .verification import verify

__version__ = "0.1.0"
