import math

import numpy as np
import pytest

from ovsim.dynamics import ControlLimits, VehicleGeometry, VehicleState, slip_angle
from ovsim.geometry import polygon_area
from ovsim.reachability import intersect, reachable_polygon
from ovsim.riskmap import RiskParams, RoadModel, build_safe_set


def brute_force_inside(p, poly):
    """Crossing-number test, independent of the vectorized implementation."""
    x, y = p
    inside = False
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        if (y1 > y) != (y2 > y):
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_at:
                inside = not inside
    return inside

GEOM = VehicleGeometry()
LIMITS = ControlLimits()
ROAD = RoadModel.straight()


def arc_endpoint(v, delta, horizon, psi0=0.0):
    """Closed-form constant-curvature endpoint from the bicycle model."""
    beta = slip_angle(delta, GEOM)
    omega = v / GEOM.wheelbase * math.cos(beta) * math.tan(delta)
    if abs(omega) < 1e-12:
        return np.array([v * horizon * math.cos(psi0 + beta),
                         v * horizon * math.sin(psi0 + beta)])
    r = v / omega
    return np.array([
        r * (math.sin(omega * horizon + psi0 + beta) - math.sin(psi0 + beta)),
        r * (math.cos(psi0 + beta) - math.cos(omega * horizon + psi0 + beta)),
    ])


class TestReachablePolygon:
    def test_straight_ahead_extent(self):
        ev = VehicleState(3.0, 1.0, 0.0, 8.0)
        poly = reachable_polygon(ev, 10.0, LIMITS, GEOM, 1.0)
        # the delta=0 rim point lies v_ref * T_h ahead along the heading
        rim = poly.boundary
        straight = min(rim, key=lambda p: abs(p[1] - 1.0) + abs(p[0] - 13.0))
        assert straight[0] == pytest.approx(13.0, abs=1e-9)
        assert straight[1] == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_about_heading(self):
        ev = VehicleState(0, 0, 0, 10.0)
        poly = reachable_polygon(ev, 10.0, LIMITS, GEOM, 1.0).boundary
        mirrored = poly * np.array([1.0, -1.0])
        # the vertex sets coincide under reflection (steering-odd model)
        got = np.sort(np.round(poly, 9), axis=0)
        want = np.sort(np.round(mirrored, 9), axis=0)
        assert np.allclose(got, want, atol=1e-9)

    def test_left_extreme_matches_arc_closed_form(self):
        ev = VehicleState(0, 0, 0, 10.0)
        poly = reachable_polygon(ev, 10.0, LIMITS, GEOM, 1.0, samples=10)
        endpoint = arc_endpoint(10.0, LIMITS.delta_max, 1.0)
        d = np.linalg.norm(poly.boundary - endpoint, axis=1).min()
        assert d < 5e-3

    def test_degenerate_at_zero_speed(self):
        ev = VehicleState(0, 0, 0, 0.0)
        poly = reachable_polygon(ev, 0.0, LIMITS, GEOM, 1.0)
        assert poly.degenerate
        assert np.linalg.norm(poly.boundary - [0, 0], axis=1).max() < 0.01

    def test_longer_horizon_never_shrinks_area(self):
        ev = VehicleState(0, 0, 0.2, 10.0)
        areas = [abs(polygon_area(reachable_polygon(ev, 10.0, LIMITS, GEOM, h).boundary))
                 for h in (0.25, 0.5, 1.0, 2.0)]
        assert all(a2 >= a1 - 1e-9 for a1, a2 in zip(areas, areas[1:]))

    def test_contains_ev_position(self):
        from ovsim.geometry import points_in_polygon
        ev = VehicleState(2.0, -1.0, 0.5, 6.0)
        poly = reachable_polygon(ev, 6.0, LIMITS, GEOM, 1.0)
        assert points_in_polygon(np.array([[2.0, -1.0]]), poly.boundary)[0]


class TestIntersect:
    def setup_method(self):
        self.ev = VehicleState(0, 0, 0, 10.0)
        _, self.safe = build_safe_set(self.ev, ROAD, [], RiskParams())

    def test_superset_polygon_returns_safe_set(self):
        huge = np.array([[-100.0, -100.0], [100.0, -100.0],
                         [100.0, 100.0], [-100.0, 100.0]])
        from ovsim.reachability import ReachablePolygon
        ssr = intersect(self.safe, ReachablePolygon(boundary=huge, horizon=1.0))
        assert np.array_equal(ssr.points, self.safe.points)

    def test_empty_safe_set(self):
        from ovsim.riskmap import SafeSet
        empty = SafeSet(points=np.empty((0, 2)), grid=self.safe.grid,
                        safe_mask=np.zeros_like(self.safe.safe_mask),
                        indices=np.empty(0, dtype=int))
        reach = reachable_polygon(self.ev, 10.0, LIMITS, GEOM, 1.0)
        assert intersect(empty, reach).is_empty

    def test_matches_brute_force_point_in_polygon(self):
        reach = reachable_polygon(self.ev, 10.0, LIMITS, GEOM, 1.0)
        ssr = intersect(self.safe, reach)
        want = {tuple(p) for p in self.safe.points
                if brute_force_inside(p, reach.boundary)}
        got = {tuple(p) for p in ssr.points}
        # brute force excludes exact-boundary points; ours includes them
        assert want <= got
        extras = got - want
        from ovsim.geometry import points_to_segments_distance
        if extras:
            d = points_to_segments_distance(np.array(sorted(extras)), reach.boundary)
            assert d.max() < 1e-6

    def test_subset_of_both_sets(self):
        reach = reachable_polygon(self.ev, 10.0, LIMITS, GEOM, 1.0)
        ssr = intersect(self.safe, reach)
        assert not ssr.is_empty
        safe_keys = {tuple(p) for p in self.safe.points}
        for p in ssr.points:
            assert tuple(p) in safe_keys
        from ovsim.geometry import points_in_polygon
        assert points_in_polygon(ssr.points, reach.boundary).all()

    def test_within_velocity_reach(self):
        v_ref = 10.0
        reach = reachable_polygon(self.ev, v_ref, LIMITS, GEOM, 1.0)
        ssr = intersect(self.safe, reach)
        d = np.linalg.norm(ssr.points - [self.ev.x, self.ev.y], axis=1)
        assert d.max() <= v_ref * 1.0 + 1e-6
