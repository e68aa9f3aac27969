"""Reachable set over the planning horizon and its intersection with the safe set.

The reachable region is bounded by the trajectories under the steering
extremes at the reference speed; its outer rim is the fan of constant-steer
endpoints between the two extremes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ControlInput, ControlLimits, VehicleGeometry, VehicleState, step
from .geometry import points_in_polygon
from .riskmap import SafeSet

DEGENERATE_RADIUS = 1e-3


@dataclass
class ReachablePolygon:
    boundary: np.ndarray   # (m, 2) closed CCW polygon, first vertex at the EV
    horizon: float
    degenerate: bool = False  # set when v_ref ~ 0 collapses the set to a point


def _constant_steer_trajectory(ev: VehicleState, v_ref: float, delta: float,
                               geom: VehicleGeometry, horizon: float,
                               samples: int) -> np.ndarray:
    state = VehicleState(ev.x, ev.y, ev.psi, v_ref)
    u = ControlInput(a=0.0, delta=delta)
    dt = horizon / samples
    out = np.empty((samples, 2))
    for i in range(samples):
        state = step(state, u, geom, dt)
        out[i] = (state.x, state.y)
    return out


def reachable_polygon(ev: VehicleState, v_ref: float, limits: ControlLimits,
                      geom: VehicleGeometry, horizon: float,
                      samples: int = 10) -> ReachablePolygon:
    """Polygon bounding the positions attainable within the horizon at v_ref.

    Left boundary follows delta_max, right boundary delta_min; the outer rim
    fans over intermediate steering extremes held constant, passing through
    the straight-ahead endpoint. Closes at the EV position.
    """
    if v_ref <= DEGENERATE_RADIUS:
        angles = np.linspace(0.0, 2.0 * np.pi, 9)[:-1]
        ring = np.stack([ev.x + DEGENERATE_RADIUS * np.cos(angles),
                         ev.y + DEGENERATE_RADIUS * np.sin(angles)], axis=1)
        return ReachablePolygon(boundary=ring, horizon=horizon, degenerate=True)

    right = _constant_steer_trajectory(ev, v_ref, limits.delta_min, geom, horizon, samples)
    # outer rim: endpoints of constant-steer arcs swept from delta_min to delta_max
    rim_deltas = np.linspace(limits.delta_min, limits.delta_max, 2 * samples + 1)[1:-1]
    rim = np.array([
        _constant_steer_trajectory(ev, v_ref, d, geom, horizon, samples)[-1]
        for d in rim_deltas
    ])
    left = _constant_steer_trajectory(ev, v_ref, limits.delta_max, geom, horizon, samples)

    boundary = np.vstack([
        [[ev.x, ev.y]],
        right,       # out along the right extreme, endpoint included
        rim,         # right-to-left through the delta=0 endpoint
        left[::-1],  # back along the left extreme
    ])
    return ReachablePolygon(boundary=boundary, horizon=horizon)


@dataclass
class SafeReachableSet:
    points: np.ndarray      # (n, 2) cell centers in both the safe set and the polygon
    indices: np.ndarray     # row-major grid flat index of each point

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0


def intersect(safe: SafeSet, reach: ReachablePolygon) -> SafeReachableSet:
    """Safe-set points inside the reachable polygon (boundary-inclusive)."""
    if safe.is_empty:
        return SafeReachableSet(points=np.empty((0, 2)), indices=np.empty(0, dtype=int))
    inside = points_in_polygon(safe.points, reach.boundary)
    return SafeReachableSet(points=safe.points[inside], indices=safe.indices[inside])
