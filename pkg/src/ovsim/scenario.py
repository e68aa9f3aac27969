"""Scenario files: schema, validation, loading and dotted-path overrides.

The on-disk format is YAML (key/value + lists), versioned with a
`schema_version` field; see docs/scenario_schema.md.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

from .behavior import BehaviorParams
from .dynamics import ControlLimits, VehicleGeometry, VehicleState
from .riskmap import RiskParams

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class NmpcParams:
    n_horizon: int = 10
    ellipse_alpha: float = 1.3
    ellipse_exponent: int = 4
    max_ellipses: int = 4
    v_min: float = 0.0
    v_max: float = 25.0


@dataclass(frozen=True)
class TrafficSpec:
    id: str
    lane: int
    direction: str                 # "forward" or "oncoming"
    start_station: float
    geometry: VehicleGeometry
    speed_profile: tuple           # ((t, v), ...) piecewise-constant


@dataclass(frozen=True)
class TimedEvent:
    t: float
    kind: str                      # trigger_overtake | trigger_abort | spawn_oncoming
    speed: float = 0.0             # spawn_oncoming only
    gap: float = 0.0


@dataclass(frozen=True)
class RoadSpec:
    lane_count: int = 2
    lane_width: float = 3.5
    length: float = 1000.0
    x0: float = -100.0


@dataclass(frozen=True)
class Scenario:
    name: str
    duration: float
    plant_dt: float
    planner_period: float
    seed: int
    road: RoadSpec
    ego_state: VehicleState
    ego_geometry: VehicleGeometry
    ego_limits: ControlLimits
    steering_lag_tau: float
    traffic: tuple[TrafficSpec, ...]
    events: tuple[TimedEvent, ...]
    behavior: BehaviorParams
    risk: RiskParams
    nmpc: NmpcParams = field(default_factory=NmpcParams)


def _need(d: dict, key: str, path: str):
    if key not in d:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return d[key]


def _num(d: dict, key: str, path: str, default=None, positive=False, nonnegative=False):
    val = d.get(key, default)
    if val is None:
        raise ScenarioError(f"{path}.{key}", "missing required field")
    if not isinstance(val, (int, float)) or isinstance(val, bool):
        raise ScenarioError(f"{path}.{key}", f"expected a number, got {val!r}")
    if positive and val <= 0:
        raise ScenarioError(f"{path}.{key}", f"must be > 0, got {val}")
    if nonnegative and val < 0:
        raise ScenarioError(f"{path}.{key}", f"must be >= 0, got {val}")
    return float(val)


def scenario_from_dict(raw: dict) -> Scenario:
    """Validate a raw scenario mapping; errors carry the offending field path."""
    if not isinstance(raw, dict):
        raise ScenarioError("", "scenario file must be a mapping")
    version = raw.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

    duration = _num(raw, "duration", "", positive=True)
    plant_dt = _num(raw, "plant_dt", "", default=0.05, positive=True)
    planner_period = _num(raw, "planner_period", "", default=0.1, positive=True)
    ratio = planner_period / plant_dt
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ScenarioError("plant_dt", "must divide planner_period")

    rd = raw.get("road", {})
    lane_count = rd.get("lane_count", 2)
    if not isinstance(lane_count, int) or lane_count < 1:
        raise ScenarioError("road.lane_count", f"must be an integer >= 1, got {lane_count!r}")
    road = RoadSpec(
        lane_count=lane_count,
        lane_width=_num(rd, "lane_width", "road", default=3.5, positive=True),
        length=_num(rd, "length", "road", default=1000.0, positive=True),
        x0=_num(rd, "x0", "road", default=-100.0),
    )

    ego = _need(raw, "ego", "")
    st = _need(ego, "state", "ego")
    ego_state = VehicleState(
        x=_num(st, "x", "ego.state", default=0.0),
        y=_num(st, "y", "ego.state", default=0.0),
        psi=_num(st, "psi", "ego.state", default=0.0),
        v=_num(st, "v", "ego.state", default=0.0, nonnegative=True),
    )

    def geometry(d: dict, path: str) -> VehicleGeometry:
        g = VehicleGeometry(
            l_f=_num(d, "l_f", path, default=1.4, positive=True),
            l_r=_num(d, "l_r", path, default=1.4, positive=True),
            length=_num(d, "length", path, default=4.5, positive=True),
            width=_num(d, "width", path, default=1.8, positive=True),
        )
        if g.l_f + g.l_r > g.length:
            raise ScenarioError(f"{path}.length", "l_f + l_r must not exceed length")
        return g

    ego_geom = geometry(ego.get("geometry", {}), "ego.geometry")
    lm = ego.get("limits", {})
    limits = ControlLimits(
        a_min=_num(lm, "a_min", "ego.limits", default=-5.0),
        a_max=_num(lm, "a_max", "ego.limits", default=3.0),
        delta_min=_num(lm, "delta_min", "ego.limits", default=-0.6),
        delta_max=_num(lm, "delta_max", "ego.limits", default=0.6),
    )
    if not (limits.a_min < 0 < limits.a_max):
        raise ScenarioError("ego.limits.a_min", "need a_min < 0 < a_max")
    if not (limits.delta_min == -limits.delta_max and limits.delta_max > 0):
        raise ScenarioError("ego.limits.delta_min", "need delta_min = -delta_max < 0")
    lag = _num(ego, "steering_lag_tau", "ego", default=0.0, nonnegative=True)

    traffic = []
    seen_ids = set()
    for i, tr in enumerate(raw.get("traffic", [])):
        path = f"traffic[{i}]"
        direction = tr.get("direction", "forward")
        if direction not in ("forward", "oncoming"):
            raise ScenarioError(f"{path}.direction", f"expected forward|oncoming, got {direction!r}")
        lane = tr.get("lane", 0)
        if not isinstance(lane, int) or not (0 <= lane < road.lane_count):
            raise ScenarioError(f"{path}.lane", f"must be an integer in [0, {road.lane_count})")
        profile = tr.get("speed_profile", [[0.0, 0.0]])
        if not isinstance(profile, list) or not profile:
            raise ScenarioError(f"{path}.speed_profile", "expected a non-empty list of [t, v]")
        parsed = []
        last_t = -1.0
        for j, bp in enumerate(profile):
            if (not isinstance(bp, (list, tuple))) or len(bp) != 2:
                raise ScenarioError(f"{path}.speed_profile[{j}]", "expected [t, v]")
            t_bp, v_bp = float(bp[0]), float(bp[1])
            if t_bp <= last_t:
                raise ScenarioError(f"{path}.speed_profile[{j}]", "breakpoints must be increasing")
            if v_bp < 0:
                raise ScenarioError(f"{path}.speed_profile[{j}]", "speed must be >= 0")
            last_t = t_bp
            parsed.append((t_bp, v_bp))
        actor_id = str(tr.get("id", f"actor{i}"))
        if actor_id in seen_ids:
            raise ScenarioError(f"{path}.id", f"duplicate actor id {actor_id!r}")
        seen_ids.add(actor_id)
        traffic.append(TrafficSpec(
            id=actor_id,
            lane=lane, direction=direction,
            start_station=_num(tr, "start_station", path),
            geometry=geometry(tr.get("geometry", {}), f"{path}.geometry"),
            speed_profile=tuple(parsed),
        ))

    events = []
    for i, evd in enumerate(raw.get("events", [])):
        path = f"events[{i}]"
        kind = evd.get("kind")
        if kind not in ("trigger_overtake", "trigger_abort", "spawn_oncoming"):
            raise ScenarioError(f"{path}.kind", f"unknown event kind {kind!r}")
        ev = TimedEvent(
            t=_num(evd, "t", path, nonnegative=True),
            kind=kind,
            speed=_num(evd, "speed", path, default=0.0, nonnegative=True),
            gap=_num(evd, "gap", path, default=0.0),
        )
        if kind == "spawn_oncoming" and ev.gap <= 0:
            raise ScenarioError(f"{path}.gap", "spawn gap must be > 0")
        events.append(ev)
    events.sort(key=lambda e: e.t)

    bh = raw.get("behavior", {})
    auto_overtake = bh.get("auto_overtake", True)
    if not isinstance(auto_overtake, bool):
        raise ScenarioError("behavior.auto_overtake", f"must be a boolean, got {auto_overtake!r}")
    behavior = BehaviorParams(
        v_des=_num(bh, "v_des", "behavior", default=10.0, positive=True),
        d_lanekeep=_num(bh, "d_lanekeep", "behavior", default=15.0, positive=True),
        d_follow_trigger=_num(bh, "d_follow_trigger", "behavior", default=15.0, positive=True),
        d_safe_overtake=_num(bh, "d_safe_overtake", "behavior", default=5.0, positive=True),
        dv_overtake=_num(bh, "dv_overtake", "behavior", default=5.0, positive=True),
        dv_abort=_num(bh, "dv_abort", "behavior", default=2.0, positive=True),
        ttc_abort=_num(bh, "ttc_abort", "behavior", default=4.0, positive=True),
        v_max=_num(bh, "v_max", "behavior", default=25.0, positive=True),
        auto_overtake=auto_overtake,
        follow_setback=_num(bh, "follow_setback", "behavior", default=0.0, nonnegative=True),
    )

    rk = raw.get("risk", {})
    risk = RiskParams(
        a_obs=_num(rk, "a_obs", "risk", default=10.0, positive=True),
        alpha_obs=_num(rk, "alpha_obs", "risk", default=1.5, positive=True),
        a_road=_num(rk, "a_road", "risk", default=4.0, positive=True),
        alpha_road=_num(rk, "alpha_road", "risk", default=1.0, positive=True),
        u_threshold=_num(rk, "u_threshold", "risk", default=1.0, positive=True),
        u_cap=_num(rk, "u_cap", "risk", default=1e6, positive=True),
        eps=_num(rk, "eps", "risk", default=1e-3, positive=True),
        resolution=_num(rk, "resolution", "risk", default=0.5, positive=True),
        radius=_num(rk, "radius", "risk", default=20.0, positive=True),
        tri_min_len=_num(rk, "tri_min_len", "risk", default=2.0, positive=True),
        tri_headway=_num(rk, "tri_headway", "risk", default=1.0, nonnegative=True),
    )

    mp = raw.get("nmpc", {})
    n_horizon = mp.get("n_horizon", 10)
    if not isinstance(n_horizon, int) or n_horizon < 1:
        raise ScenarioError("nmpc.n_horizon", f"must be an integer >= 1, got {n_horizon!r}")
    exponent = mp.get("ellipse_exponent", 4)
    if not isinstance(exponent, int) or exponent < 2 or exponent % 2:
        raise ScenarioError("nmpc.ellipse_exponent", f"must be an even integer >= 2, got {exponent!r}")
    alpha = _num(mp, "ellipse_alpha", "nmpc", default=1.3)
    if alpha < 1.0:
        raise ScenarioError("nmpc.ellipse_alpha", f"must be >= 1, got {alpha}")
    max_ellipses = mp.get("max_ellipses", 4)
    if not isinstance(max_ellipses, int) or max_ellipses < 0:
        raise ScenarioError("nmpc.max_ellipses", f"must be an integer >= 0, got {max_ellipses!r}")
    nmpc_params = NmpcParams(
        n_horizon=n_horizon, ellipse_alpha=alpha, ellipse_exponent=exponent,
        max_ellipses=max_ellipses,
        v_min=_num(mp, "v_min", "nmpc", default=0.0),
        v_max=_num(mp, "v_max", "nmpc", default=25.0),
    )

    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        raise ScenarioError("seed", f"must be an integer, got {seed!r}")

    return Scenario(
        name=str(raw.get("name", "scenario")),
        duration=duration, plant_dt=plant_dt, planner_period=planner_period,
        seed=seed, road=road, ego_state=ego_state, ego_geometry=ego_geom,
        ego_limits=limits, steering_lag_tau=lag,
        traffic=tuple(traffic), events=tuple(events),
        behavior=behavior, risk=risk, nmpc=nmpc_params,
    )


def _descend(node, part: str, dotted: str):
    """One path segment: a mapping key, optionally with a [index] suffix."""
    if "[" in part and part.endswith("]"):
        name, idx_text = part[:-1].split("[", 1)
        seq = node.setdefault(name, [])
        try:
            return seq[int(idx_text)]
        except (IndexError, ValueError):
            raise ScenarioError(dotted, f"no list element {part!r}")
    return node.setdefault(part, {})


def apply_overrides(raw: dict, overrides: list[str]) -> dict:
    """Apply `dotted.path=value` overrides onto a raw scenario mapping.

    Values parse as YAML scalars, so `--set behavior.v_des=12.5` and
    `--set events[0].kind=trigger_abort` both work.
    """
    out = copy.deepcopy(raw)
    for item in overrides:
        if "=" not in item:
            raise ScenarioError(item, "override must look like dotted.path=value")
        dotted, text = item.split("=", 1)
        parts = dotted.split(".")
        node = out
        for part in parts[:-1]:
            node = _descend(node, part, dotted)
        last = parts[-1]
        if "[" in last and last.endswith("]"):
            name, idx_text = last[:-1].split("[", 1)
            seq = node.setdefault(name, [])
            try:
                seq[int(idx_text)] = yaml.safe_load(text)
            except (IndexError, ValueError):
                raise ScenarioError(dotted, f"no list element {last!r}")
        else:
            node[last] = yaml.safe_load(text)
    return out


def load_scenario(path, overrides: list[str] | None = None) -> Scenario:
    with open(path) as f:
        raw = yaml.safe_load(f)
    if overrides:
        raw = apply_overrides(raw, overrides)
    return scenario_from_dict(raw)
