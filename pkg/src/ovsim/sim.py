"""Deterministic closed-loop engine.

Each planner tick runs the full pipeline in order: safe set, reachable set,
intersection, maneuver selection, intermediate reference, collision
constraints, horizon solve; the first control is then held zero-order across
the plant sub-steps. Scripted actors follow their lane centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import behavior as bh
from . import nmpc
from .dynamics import ControlInput, VehicleState, step, wrap_angle
from .geometry import convex_polygon_distance, rectangle_corners
from .reachability import intersect, reachable_polygon
from .riskmap import ObstacleVehicle, RoadModel, build_safe_set, velocity_triangles
from .scenario import Scenario, TrafficSpec


def collision_check(ego_polygon: np.ndarray, actor_polygons: list[np.ndarray]):
    """Minimum distance from the ego polygon to any actor polygon; collision at <= 0."""
    if not actor_polygons:
        return float("inf"), False
    d = min(convex_polygon_distance(ego_polygon, p) for p in actor_polygons)
    return d, d <= 0.0


@dataclass
class Actor:
    spec: TrafficSpec
    station: float
    spawned_at: float = 0.0

    def speed_at(self, t: float) -> float:
        v = self.spec.speed_profile[0][1]
        for t_bp, v_bp in self.spec.speed_profile:
            if t - self.spawned_at >= t_bp:
                v = v_bp
        return v

    def advance(self, t: float, dt: float) -> None:
        sign = 1.0 if self.spec.direction == "forward" else -1.0
        self.station += sign * self.speed_at(t) * dt

    def state(self, road: RoadModel, t: float) -> VehicleState:
        p = road.lane_center(self.spec.lane, self.station)
        heading = road.heading_at(self.station)
        if self.spec.direction == "oncoming":
            heading = wrap_angle(heading + math.pi)
        return VehicleState(x=float(p[0]), y=float(p[1]), psi=heading,
                            v=self.speed_at(t))

    def obstacle(self, road: RoadModel, t: float) -> ObstacleVehicle:
        return ObstacleVehicle(state=self.state(road, t), geom=self.spec.geometry,
                               id=self.spec.id)


@dataclass
class TickLog:
    t: float
    planner_tick: bool
    ego: VehicleState
    actors: list            # (id, VehicleState) pairs
    fsm: str
    p_ref: tuple
    v_ref: float
    p_interim: tuple
    interim_v_ref: float
    emergency: bool
    applied_a: float
    applied_delta: float
    commanded_delta: float
    solver_status: str
    solver_iterations: int
    solver_kkt: float
    solver_objective: float
    solver_min_g: float     # min over stages and ellipses of the returned solution
    current_g: list         # g of each active ellipse at the current ego position
    ssr_size: int
    safe_empty: bool
    min_clearance: float
    intrusion: float


CSV_COLUMNS = [
    "t", "planner_tick", "ego_x", "ego_y", "ego_psi", "ego_v", "fsm",
    "p_ref_x", "p_ref_y", "v_ref", "p_interim_x", "p_interim_y",
    "interim_v_ref", "emergency", "applied_a", "applied_delta",
    "commanded_delta", "solver_status", "solver_iterations", "solver_kkt",
    "solver_objective", "solver_min_g", "current_g", "ssr_size", "safe_empty",
    "min_clearance", "intrusion", "actors",
]


def _fmt(x: float) -> str:
    return repr(float(x))


def log_to_row(log: TickLog) -> list[str]:
    actors = "|".join(
        f"{aid}:{_fmt(s.x)}:{_fmt(s.y)}:{_fmt(s.psi)}:{_fmt(s.v)}"
        for aid, s in log.actors
    )
    gvals = "|".join(_fmt(g) for g in log.current_g)
    return [
        _fmt(log.t), str(int(log.planner_tick)),
        _fmt(log.ego.x), _fmt(log.ego.y), _fmt(log.ego.psi), _fmt(log.ego.v),
        log.fsm, _fmt(log.p_ref[0]), _fmt(log.p_ref[1]), _fmt(log.v_ref),
        _fmt(log.p_interim[0]), _fmt(log.p_interim[1]), _fmt(log.interim_v_ref),
        str(int(log.emergency)), _fmt(log.applied_a), _fmt(log.applied_delta),
        _fmt(log.commanded_delta), log.solver_status,
        str(log.solver_iterations), _fmt(log.solver_kkt),
        _fmt(log.solver_objective), _fmt(log.solver_min_g), gvals,
        str(log.ssr_size), str(int(log.safe_empty)),
        _fmt(log.min_clearance), _fmt(log.intrusion), actors,
    ]


def write_log_csv(logs: list[TickLog], path) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(CSV_COLUMNS) + "\n")
        for log in logs:
            f.write(",".join(log_to_row(log)) + "\n")


@dataclass
class RunMetrics:
    collision_occurred: bool = False
    min_clearance: float = float("inf")
    max_intrusion: float = 0.0
    intrusion_area: float = 0.0
    timeline: list = field(default_factory=list)   # (state, t_enter)
    completion: bool = False
    planner_ticks: int = 0
    fallback_ticks: int = 0
    emergency_ticks: int = 0
    clamped_controls: int = 0

    def to_dict(self) -> dict:
        return {
            "collision_occurred": self.collision_occurred,
            "min_clearance": self.min_clearance,
            "max_intrusion": self.max_intrusion,
            "intrusion_area": self.intrusion_area,
            "timeline": [[s, t] for s, t in self.timeline],
            "completion": self.completion,
            "planner_ticks": self.planner_ticks,
            "fallback_ticks": self.fallback_ticks,
            "emergency_ticks": self.emergency_ticks,
            "clamped_controls": self.clamped_controls,
        }


@dataclass
class Command:
    kind: str                      # trigger_overtake | trigger_abort | spawn_oncoming
    cmd_id: int = 0
    speed: float = 0.0
    gap: float = 0.0


@dataclass
class TickResult:
    """Planner-tick snapshot consumed by the bridge server."""
    t: float
    fsm: str
    ego: VehicleState
    actors: list
    p_ref: tuple
    p_interim: tuple
    v_ref: float
    horizon: np.ndarray            # (N+1, 4) planned states
    reach_boundary: np.ndarray
    ssr_points: np.ndarray
    solver_status: str
    dispositions: list             # (Command, "applied"|"ignored") for drained commands


class SimEngine:
    """Single-owner sequential loop; commands arrive through queue_command()."""

    def __init__(self, scenario: Scenario, dump_sets_dir=None, dump_sets_every: int = 10):
        self.scenario = scenario
        sc = scenario
        self.road = RoadModel.straight(length=sc.road.length, lane_count=sc.road.lane_count,
                                       lane_width=sc.road.lane_width, x0=sc.road.x0)
        self.dump_sets_dir = dump_sets_dir
        self.dump_sets_every = max(1, dump_sets_every)
        self.reset()

    def reset(self) -> None:
        sc = self.scenario
        self.t = 0.0
        self.tick_index = 0
        self.ego = sc.ego_state
        self.actual_delta = 0.0
        self.actors = [Actor(spec=tr, station=tr.start_station) for tr in sc.traffic]
        self.fsm = bh.INITIAL_STATE
        self.active_lv_id: str | None = None
        self.v_ref_prev = sc.behavior.v_des
        self.warm: nmpc.HorizonSolution | None = None
        self.pending_events = list(sc.events)
        self.command_queue: list[Command] = []
        self.logs: list[TickLog] = []
        self.metrics = RunMetrics(timeline=[(self.fsm.value, 0.0)])
        self._spawn_counter = 0
        self._overtake_done = False

    # ---- command interface (server / CLI events) ----

    def queue_command(self, cmd: Command) -> None:
        self.command_queue.append(cmd)

    def _drain_commands(self) -> tuple[bh.EventKind | None, list]:
        """Take at most one manual trigger for this tick and apply spawns."""
        manual = None
        manual_cmd = None
        dispositions = []
        keep = []
        for cmd in self.command_queue:
            if cmd.kind == "spawn_oncoming":
                self._spawn_oncoming(cmd.speed, cmd.gap)
                dispositions.append((cmd, "applied"))
            elif cmd.kind in ("trigger_overtake", "trigger_abort") and manual is None:
                manual = (bh.EventKind.SIGMA2 if cmd.kind == "trigger_overtake"
                          else bh.EventKind.SIGMA4)
                manual_cmd = cmd
            else:
                keep.append(cmd)
        self.command_queue = keep
        return manual, dispositions + ([(manual_cmd, None)] if manual_cmd else [])

    def _spawn_oncoming(self, speed: float, gap: float) -> None:
        s_ev, _ = self.road.station_offset(np.array([[self.ego.x, self.ego.y]]))
        lane = 1 if self.scenario.road.lane_count > 1 else 0
        self._spawn_counter += 1
        spec = TrafficSpec(id=f"oncoming{self._spawn_counter}", lane=lane,
                           direction="oncoming", start_station=float(s_ev[0]) + gap,
                           geometry=self.scenario.ego_geometry,
                           speed_profile=((0.0, speed),))
        self.actors.append(Actor(spec=spec, station=spec.start_station,
                                 spawned_at=self.t))

    def _process_timed_events(self) -> bh.EventKind | None:
        manual = None
        remaining = []
        for ev in self.pending_events:
            if ev.t <= self.t + 1e-9:
                if ev.kind == "spawn_oncoming":
                    self._spawn_oncoming(ev.speed, ev.gap)
                elif ev.kind == "trigger_overtake" and manual is None:
                    manual = bh.EventKind.SIGMA2
                elif ev.kind == "trigger_abort" and manual is None:
                    manual = bh.EventKind.SIGMA4
                else:
                    remaining.append(ev)
            else:
                remaining.append(ev)
        self.pending_events = remaining
        return manual

    # ---- per-tick pipeline ----

    def _sensed(self) -> list[ObstacleVehicle]:
        out = []
        ego_p = np.array([self.ego.x, self.ego.y])
        for actor in self.actors:
            obs = actor.obstacle(self.road, self.t)
            d = math.hypot(obs.state.x - ego_p[0], obs.state.y - ego_p[1])
            if d <= self.scenario.risk.radius:
                out.append(obs)
        return out

    def _lead_vehicle(self, sensed: list[ObstacleVehicle]) -> ObstacleVehicle | None:
        if self.fsm != bh.ManeuverState.LANE_KEEP and self.active_lv_id is not None:
            for actor in self.actors:
                if actor.spec.id == self.active_lv_id:
                    return actor.obstacle(self.road, self.t)
            return None
        # in L: the nearest same-direction vehicle ahead in the ego's initial lane
        s_ev, _ = self.road.station_offset(np.array([[self.ego.x, self.ego.y]]))
        best, best_gap = None, float("inf")
        for obs in sensed:
            actor_spec = next(a.spec for a in self.actors if a.spec.id == obs.id)
            if actor_spec.direction != "forward":
                continue
            s_o, lat_o = self.road.station_offset(np.array([[obs.state.x, obs.state.y]]))
            if abs(float(lat_o[0])) > 0.5 * self.road.lane_width:
                continue
            gap = float(s_o[0]) - float(s_ev[0])
            if 0.0 < gap < best_gap:
                best, best_gap = obs, gap
        return best

    def tick(self) -> TickResult:
        sc = self.scenario
        manual = self._process_timed_events()
        queued_manual, dispositions = self._drain_commands()
        if manual is None:
            manual = queued_manual

        sensed = self._sensed()
        triangles = [
            velocity_triangles(o, sc.risk,
                               closing_speed=bh.closing_speed(self.ego, o.state))
            for o in sensed
        ]
        grid, safe = build_safe_set(self.ego, self.road, triangles, sc.risk)
        horizon_s = sc.nmpc.n_horizon * sc.planner_period
        reach = reachable_polygon(self.ego, self.v_ref_prev, sc.ego_limits,
                                  sc.ego_geometry, horizon_s)
        ssr = intersect(safe, reach)

        if self.dump_sets_dir is not None and self.tick_index % self.dump_sets_every == 0:
            tag = f"{self.t:07.2f}".replace(".", "_")
            grid.to_csv(f"{self.dump_sets_dir}/riskmap_t{tag}.csv")
            with open(f"{self.dump_sets_dir}/reach_t{tag}.csv", "w") as f:
                f.write("x,y\n")
                for x, y in reach.boundary:
                    f.write(f"{float(x)!r},{float(y)!r}\n")

        lv = self._lead_vehicle(sensed)
        oncoming = [o for o in sensed
                    if next(a.spec for a in self.actors if a.spec.id == o.id).direction == "oncoming"]
        events = bh.detect_events(self.ego, lv, oncoming, self.fsm, self.road,
                                  sc.behavior, sc.risk, safe_set=safe, manual=manual)

        prev_state = self.fsm
        applied_event = None
        for event in events:
            nxt = bh.transition(self.fsm, event)
            if nxt != self.fsm:
                applied_event = event
                self.fsm = nxt
                break
        if self.fsm != prev_state:
            self.metrics.timeline.append((self.fsm.value, self.t))
            if prev_state == bh.ManeuverState.LANE_KEEP and lv is not None:
                self.active_lv_id = lv.id
            if self.fsm == bh.ManeuverState.LANE_KEEP:
                if prev_state == bh.ManeuverState.OVERTAKE:
                    self._overtake_done = True
                self.active_lv_id = None
                lv = self._lead_vehicle(sensed)

        for i, (cmd, disp) in enumerate(dispositions):
            if disp is None:
                ok = (applied_event is not None and applied_event.source == "manual")
                dispositions[i] = (cmd, "applied" if ok else "ignored")

        target = bh.reference_for(self.fsm, self.ego, lv, self.road, sc.behavior, sc.risk)
        interim = bh.intermediate_ref(target, ssr, self.road, safe_set=safe, ev=self.ego)
        if interim.emergency:
            self.metrics.emergency_ticks += 1

        by_distance = sorted(
            sensed, key=lambda o: math.hypot(o.state.x - self.ego.x,
                                             o.state.y - self.ego.y))
        ellipses = [
            nmpc.ellipse_for(o, sc.ego_geometry, sc.nmpc.ellipse_alpha,
                             sc.nmpc.ellipse_exponent)
            for o in by_distance[:sc.nmpc.max_ellipses]
        ]

        x_ref = np.array([interim.p_interim[0], interim.p_interim[1],
                          interim.psi_ref, interim.v_ref])
        problem = nmpc.HorizonProblem.tracking(
            self.ego, x_ref, sc.ego_limits, sc.ego_geometry,
            n_horizon=sc.nmpc.n_horizon, dt=sc.planner_period,
            ellipses=ellipses, v_min=sc.nmpc.v_min, v_max=sc.nmpc.v_max)
        solution = nmpc.solve(problem, warm_start=self.warm)
        self.warm = solution

        self.metrics.planner_ticks += 1
        if solution.status != "converged":
            self.metrics.fallback_ticks += 1

        u_raw = ControlInput(a=float(solution.controls[0, 0]),
                             delta=float(solution.controls[0, 1]))
        u0 = sc.ego_limits.clamp(u_raw)
        if u0 != u_raw:
            self.metrics.clamped_controls += 1

        # next tick's reachable set uses the maneuver's reference speed; the
        # emergency fallback's zero speed must not collapse future reach
        self.v_ref_prev = target.v_ref

        result = TickResult(
            t=self.t, fsm=self.fsm.value, ego=self.ego,
            actors=[(a.spec.id, a.state(self.road, self.t)) for a in self.actors],
            p_ref=(float(target.p_ref[0]), float(target.p_ref[1])),
            p_interim=(float(interim.p_interim[0]), float(interim.p_interim[1])),
            v_ref=target.v_ref, horizon=solution.states,
            reach_boundary=reach.boundary, ssr_points=ssr.points,
            solver_status=solution.status, dispositions=dispositions,
        )

        self._run_plant_substeps(u0, solution, target, interim, ssr, safe, ellipses)
        self.tick_index += 1
        return result

    def _intrusion(self, ego_poly: np.ndarray) -> float:
        _, lat = self.road.station_offset(ego_poly)
        bound = self.road.lane_center_offset(0) + 0.5 * self.road.lane_width
        return max(0.0, float(lat.max()) - bound)

    def _log_snapshot(self, planner_tick, solution, target, interim, ssr, safe,
                      ellipses, u0) -> None:
        ego_poly = rectangle_corners(self.ego.x, self.ego.y, self.ego.psi,
                                     self.scenario.ego_geometry.length,
                                     self.scenario.ego_geometry.width)
        actor_states = [(a.spec.id, a.state(self.road, self.t)) for a in self.actors]
        actor_polys = [
            rectangle_corners(s.x, s.y, s.psi, a.spec.geometry.length,
                              a.spec.geometry.width)
            for (_, s), a in zip(actor_states, self.actors)
        ]
        clearance, collided = collision_check(ego_poly, actor_polys)
        intrusion = self._intrusion(ego_poly)

        m = self.metrics
        m.min_clearance = min(m.min_clearance, clearance)
        if collided:
            m.collision_occurred = True
        m.max_intrusion = max(m.max_intrusion, intrusion)
        m.intrusion_area += intrusion * self.scenario.plant_dt

        self.logs.append(TickLog(
            t=self.t, planner_tick=planner_tick, ego=self.ego,
            actors=actor_states, fsm=self.fsm.value,
            p_ref=(float(target.p_ref[0]), float(target.p_ref[1])),
            v_ref=target.v_ref,
            p_interim=(float(interim.p_interim[0]), float(interim.p_interim[1])),
            interim_v_ref=interim.v_ref, emergency=interim.emergency,
            applied_a=u0.a, applied_delta=self.actual_delta,
            commanded_delta=u0.delta,
            solver_status=solution.status, solver_iterations=solution.iterations,
            solver_kkt=solution.kkt_residual, solver_objective=solution.objective,
            solver_min_g=solution.min_constraint,
            current_g=[nmpc.constraint_value(self.ego, e) for e in ellipses],
            ssr_size=len(ssr.points), safe_empty=safe.is_empty,
            min_clearance=clearance, intrusion=intrusion,
        ))

    def _run_plant_substeps(self, u0, solution, target, interim, ssr, safe,
                            ellipses) -> None:
        sc = self.scenario
        n_sub = round(sc.planner_period / sc.plant_dt)
        for i in range(n_sub):
            # the steering the plant sees over this substep, after actuator lag
            if sc.steering_lag_tau > 0.0:
                blend = 1.0 - math.exp(-sc.plant_dt / sc.steering_lag_tau)
                self.actual_delta += blend * (u0.delta - self.actual_delta)
            else:
                self.actual_delta = u0.delta
            self._log_snapshot(i == 0, solution, target, interim, ssr, safe,
                               ellipses, u0)
            plant_u = ControlInput(a=u0.a, delta=self.actual_delta)
            self.ego = step(self.ego, plant_u, sc.ego_geometry, sc.plant_dt)
            for actor in self.actors:
                actor.advance(self.t, sc.plant_dt)
            self.t = round(self.t + sc.plant_dt, 9)
        self._last_context = (solution, target, interim, ssr, safe, ellipses, u0)
        self.metrics.completion = (self._overtake_done
                                   and self.fsm == bh.ManeuverState.LANE_KEEP)

    def finished(self) -> bool:
        return self.t >= self.scenario.duration - 1e-9

    def run(self) -> tuple[list[TickLog], RunMetrics]:
        while not self.finished():
            self.tick()
        # closing snapshot so the final state is on record
        solution, target, interim, ssr, safe, ellipses, u0 = self._last_context
        self._log_snapshot(False, solution, target, interim, ssr, safe, ellipses, u0)
        return self.logs, self.metrics


def run(scenario: Scenario) -> tuple[list[TickLog], RunMetrics]:
    """Run a scenario start to finish; deterministic for identical inputs."""
    return SimEngine(scenario).run()
