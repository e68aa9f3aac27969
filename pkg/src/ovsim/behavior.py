"""Maneuver finite state machine, per-state reference targets and the
intermediate reference selected from the safe-reachable set.

States: L (lane keep), F (follow lead vehicle), O (overtake), A (abort).
Events sigma1..sigma5 are produced by heuristic rules on poses and speeds;
sigma2 (start overtake) and sigma4 (abort) can also be requested manually.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState
from .riskmap import ObstacleVehicle, RiskParams, RoadModel, SafeSet, velocity_triangles


class ManeuverState(str, enum.Enum):
    LANE_KEEP = "L"
    FOLLOW = "F"
    OVERTAKE = "O"
    ABORT = "A"


class EventKind(str, enum.Enum):
    SIGMA1 = "sigma1"  # lead vehicle detected within trigger distance
    SIGMA2 = "sigma2"  # overtake favourable / manually requested
    SIGMA3 = "sigma3"  # overtake complete, past the front vertex zone
    SIGMA4 = "sigma4"  # collision predicted / abort manually triggered
    SIGMA5 = "sigma5"  # merged back behind the lead vehicle


@dataclass(frozen=True)
class TransitionEvent:
    kind: EventKind
    source: str = "rule"  # "rule" or "manual" (sigma2/sigma4 only)


INITIAL_STATE = ManeuverState.LANE_KEEP

# transition table; unlisted (state, event) pairs are no-ops
_TRANSITIONS = {
    (ManeuverState.LANE_KEEP, EventKind.SIGMA1): ManeuverState.FOLLOW,
    (ManeuverState.FOLLOW, EventKind.SIGMA2): ManeuverState.OVERTAKE,
    (ManeuverState.OVERTAKE, EventKind.SIGMA3): ManeuverState.LANE_KEEP,
    (ManeuverState.OVERTAKE, EventKind.SIGMA4): ManeuverState.ABORT,
    (ManeuverState.ABORT, EventKind.SIGMA5): ManeuverState.FOLLOW,
}


def transition(current: ManeuverState, event: TransitionEvent) -> ManeuverState:
    """Total transition function; undefined pairs return the current state."""
    return _TRANSITIONS.get((current, event.kind), current)


@dataclass(frozen=True)
class BehaviorParams:
    v_des: float = 10.0              # cruise speed in L (m/s)
    d_lanekeep: float = 15.0         # lookahead of the L-state target (m)
    d_follow_trigger: float = 15.0   # sigma1 distance (m), within the sensing radius
    d_safe_overtake: float = 5.0     # clearance past the front vertex for O / sigma3 (m)
    dv_overtake: float = 5.0         # overtake speed margin over the LV (m/s)
    dv_abort: float = 2.0            # abort speed margin under the LV (m/s)
    ttc_abort: float = 4.0           # sigma4 time-to-collision threshold (s)
    v_max: float = 25.0              # speed ceiling for the overtake reference (m/s)
    auto_overtake: bool = True       # enable the rule-based sigma2 (manual always works)
    follow_setback: float = 0.0      # extra follow/abort gap behind the rear vertex (m),
                                     # so the target point itself sits in the safe set


@dataclass(frozen=True)
class ReferenceTarget:
    p_ref: np.ndarray
    v_ref: float
    psi_ref: float


@dataclass(frozen=True)
class IntermediateReference:
    p_interim: np.ndarray
    psi_ref: float
    v_ref: float
    emergency: bool = False  # set when the safe-reachable set was empty


class MissingLeadVehicle(ValueError):
    """Raised when a maneuver that needs the lead vehicle has none."""


def _station(road: RoadModel, p) -> float:
    s, _ = road.station_offset(np.asarray(p, dtype=float)[None, :])
    return float(s[0])


def _lateral(road: RoadModel, p) -> float:
    _, lat = road.station_offset(np.asarray(p, dtype=float)[None, :])
    return float(lat[0])


def closing_speed(ev: VehicleState, obs: VehicleState) -> float:
    """Speed at which the EV closes on the obstacle along the EV's direction."""
    return max(0.0, ev.v - obs.v * math.cos(obs.psi - ev.psi))


def _lv_triangles(ev: VehicleState, lv: ObstacleVehicle, risk_params: RiskParams):
    return velocity_triangles(lv, risk_params, closing_speed=closing_speed(ev, lv.state))


def detect_events(ev: VehicleState, lv: ObstacleVehicle | None,
                  oncoming: list[ObstacleVehicle], state: ManeuverState,
                  road: RoadModel, params: BehaviorParams,
                  risk_params: RiskParams = RiskParams(),
                  safe_set: SafeSet | None = None,
                  manual: EventKind | None = None) -> list[TransitionEvent]:
    """Rule-generated events for this tick, plus any manual sigma2/sigma4 request."""
    events: list[TransitionEvent] = []
    s_ev = _station(road, (ev.x, ev.y))
    lat_ev = _lateral(road, (ev.x, ev.y))

    if manual == EventKind.SIGMA2:
        events.append(TransitionEvent(EventKind.SIGMA2, source="manual"))
    elif manual == EventKind.SIGMA4:
        events.append(TransitionEvent(EventKind.SIGMA4, source="manual"))

    if lv is not None:
        tri = _lv_triangles(ev, lv, risk_params)
        s_lv = _station(road, (lv.state.x, lv.state.y))
        s_front = _station(road, tri.front_vertex)
        s_rear = _station(road, tri.rear_vertex)
        lat_lv = _lateral(road, (lv.state.x, lv.state.y))
        half_lane = 0.5 * road.lane_width
        lv_in_ego_lane = abs(lat_lv) <= half_lane

        # sigma1: in-lane lead vehicle ahead within the trigger distance
        gap = s_lv - s_ev
        if (lv_in_ego_lane and 0.0 < gap <= params.d_follow_trigger
                and gap <= risk_params.radius):
            events.append(TransitionEvent(EventKind.SIGMA1))

        # sigma2: adjacent-lane corridor long enough for the pass is fully safe
        if params.auto_overtake and safe_set is not None and not safe_set.is_empty:
            v_ot = min(params.v_max, lv.state.v + params.dv_overtake)
            rel = v_ot - lv.state.v
            if rel > 0.0:
                gap_to_pass = max(0.0, s_front + params.d_safe_overtake - s_ev)
                corridor = gap_to_pass * v_ot / rel
                lat_adj = road.lane_center_offset(1) if road.lane_count > 1 else 0.0
                # the corridor cannot extend past the sensing disk
                reach_cap = math.sqrt(max(0.0, risk_params.radius ** 2 - lat_adj ** 2))
                corridor = min(corridor, reach_cap - risk_params.resolution)
                res = risk_params.resolution
                n_samples = max(2, int(corridor / res) + 1)
                stations = s_ev + np.linspace(0.0, corridor, n_samples)
                clear = all(
                    safe_set.contains(road.point_at(s, lat_adj)) for s in stations
                )
                if clear:
                    events.append(TransitionEvent(EventKind.SIGMA2))

        # sigma3: overtake complete once past the front-vertex clearance zone
        if s_ev > s_front + params.d_safe_overtake:
            events.append(TransitionEvent(EventKind.SIGMA3))

        # sigma4: predicted collision with oncoming traffic while still beside/behind the LV
        if state == ManeuverState.OVERTAKE and s_ev < s_front:
            for onc in oncoming:
                s_onc = _station(road, (onc.state.x, onc.state.y))
                gap_onc = s_onc - s_ev
                closing = ev.v + onc.state.v
                if gap_onc > 0.0 and closing > 0.0 and gap_onc / closing < params.ttc_abort:
                    events.append(TransitionEvent(EventKind.SIGMA4))
                    break

        # sigma5: merged back into the original lane behind the rear vertex
        if (state == ManeuverState.ABORT and abs(lat_ev) <= half_lane
                and s_ev < s_rear):
            events.append(TransitionEvent(EventKind.SIGMA5))

    order = [EventKind.SIGMA1, EventKind.SIGMA2, EventKind.SIGMA3,
             EventKind.SIGMA4, EventKind.SIGMA5]
    events.sort(key=lambda e: (order.index(e.kind), e.source != "manual"))
    return events


def reference_for(state: ManeuverState, ev: VehicleState,
                  lv: ObstacleVehicle | None, road: RoadModel,
                  params: BehaviorParams,
                  risk_params: RiskParams = RiskParams()) -> ReferenceTarget:
    """Final reference pose/speed for the active maneuver."""
    s_ev = _station(road, (ev.x, ev.y))

    if state == ManeuverState.LANE_KEEP:
        s_ref = s_ev + params.d_lanekeep
        return ReferenceTarget(p_ref=road.lane_center(0, s_ref),
                               v_ref=params.v_des,
                               psi_ref=road.heading_at(s_ref))

    if lv is None:
        raise MissingLeadVehicle(f"state {state.value} requires a lead vehicle")

    tri = _lv_triangles(ev, lv, risk_params)
    if state == ManeuverState.FOLLOW:
        s_ref = _station(road, tri.rear_vertex) - params.follow_setback
        return ReferenceTarget(p_ref=road.lane_center(0, s_ref),
                               v_ref=lv.state.v,
                               psi_ref=road.heading_at(s_ref))
    if state == ManeuverState.OVERTAKE:
        s_ref = _station(road, tri.front_vertex) + params.d_safe_overtake
        v_ot = min(params.v_max, lv.state.v + params.dv_overtake)
        return ReferenceTarget(p_ref=road.lane_center(0, s_ref),
                               v_ref=v_ot,
                               psi_ref=road.heading_at(s_ref))
    # ABORT: fall back behind the rear vertex, slower than the LV
    s_ref = _station(road, tri.rear_vertex) - params.follow_setback
    return ReferenceTarget(p_ref=road.lane_center(0, s_ref),
                           v_ref=max(0.0, lv.state.v - params.dv_abort),
                           psi_ref=road.heading_at(s_ref))


def intermediate_ref(target: ReferenceTarget, ssr, road: RoadModel,
                     safe_set: SafeSet | None = None,
                     ev: VehicleState | None = None) -> IntermediateReference:
    """Safe-reachable point nearest the final target, assembled as the NMPC reference.

    Ties break toward the smaller lateral offset from the ego-lane center, then
    the smaller grid index. An empty safe-reachable set falls back to an
    emergency stop target: the safe point nearest the EV (or the EV position
    itself when even the safe set is empty) with zero reference speed.
    """
    if ssr is None or ssr.is_empty:
        if safe_set is not None and not safe_set.is_empty and ev is not None:
            d = np.linalg.norm(safe_set.points - np.array([ev.x, ev.y]), axis=1)
            p = safe_set.points[int(np.argmin(d))]
        elif ev is not None:
            p = np.array([ev.x, ev.y])
        else:
            p = np.asarray(target.p_ref, dtype=float)
        s, _ = road.station_offset(p[None, :])
        return IntermediateReference(p_interim=p, psi_ref=road.heading_at(float(s[0])),
                                     v_ref=0.0, emergency=True)

    d = np.linalg.norm(ssr.points - np.asarray(target.p_ref, dtype=float), axis=1)
    _, lat = road.station_offset(ssr.points)
    order = np.lexsort((ssr.indices, np.abs(lat), d))
    p = ssr.points[order[0]]
    s, _ = road.station_offset(p[None, :])
    return IntermediateReference(p_interim=p, psi_ref=road.heading_at(float(s[0])),
                                 v_ref=target.v_ref)
