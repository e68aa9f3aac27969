"""Closed-loop overtaking simulator and planner.

Pipeline per planner tick: potential-field safe set, steering-extreme
reachable set, maneuver FSM, intermediate reference selection, and a
receding-horizon trajectory optimization with superellipse obstacle
constraints — including aborting an overtake and merging back.
"""

from .behavior import (BehaviorParams, EventKind, IntermediateReference,
                       ManeuverState, ReferenceTarget, TransitionEvent,
                       detect_events, intermediate_ref, reference_for, transition)
from .dynamics import (ControlInput, ControlLimits, VehicleGeometry,
                       VehicleState, derivative, slip_angle, step)
from .nmpc import (HorizonProblem, HorizonSolution, ObstacleEllipse,
                   analytic_gradients, constraint_value, ellipse_for, solve)
from .reachability import ReachablePolygon, SafeReachableSet, intersect, reachable_polygon
from .riskmap import (ObstacleVehicle, RiskGrid, RiskParams, RoadModel, SafeSet,
                      SafetyTriangles, build_safe_set, risk_at, velocity_triangles)
from .scenario import Scenario, ScenarioError, load_scenario, scenario_from_dict
from .sim import RunMetrics, SimEngine, TickLog, collision_check, run

__version__ = "0.1.0"
