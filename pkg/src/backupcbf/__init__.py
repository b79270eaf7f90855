"""Input-bounded safe control with backup control barrier functions.

Closed-form CBF filter, backup-CBF QP, function-based blending and the
optimally-interpolated controller, with the flow/sensitivity machinery,
a double-integrator and a fixed-wing aircraft plant, and a simulation CLI.
"""
from .controllers import (
    ConstraintCoeffs,
    ControllerOutput,
    KktReport,
    bcbf_qp_controller,
    blended_controller,
    cbf_filter_closed_form,
    kkt_check,
    oi_coefficients,
    oi_controller,
    oi_mu_star,
)
from .core import (
    ControlAffineModel,
    ControllerFn,
    DivergedFlow,
    InputBox,
    NumericalError,
    SafetySpec,
)
from .integrate import (
    FlowBundle,
    HorizonGrid,
    integrate_flow,
    integrate_push_forward,
    integrate_sensitivity,
    ode_count,
)
from .models import AircraftParams, PlantModel, aircraft_scenario, double_integrator_scenario
from .qp import LinearConstraintSet, QpSolution, lambda_relu, solve_box_qp
from .sim import Metrics, SimConfig, TrajectoryLog, compare_controllers, compute_metrics, simulate

__version__ = "0.1.0"
