"""Local potential-field risk map and safe-set extraction.

Obstacles (body rectangle plus velocity-dependent fore/aft triangles) and road
edges each contribute a Yukawa-style repulsive term A*exp(-alpha*d)/d; cells
whose combined risk stays at or below the threshold form the safe set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleGeometry, VehicleState
from .geometry import points_in_convex_polygon, points_to_segments_distance


@dataclass(frozen=True)
class RiskParams:
    a_obs: float = 10.0        # obstacle potential amplitude
    alpha_obs: float = 1.5     # obstacle decay rate (1/m)
    a_road: float = 4.0        # road-edge potential amplitude
    alpha_road: float = 1.0    # road-edge decay rate (1/m)
    u_threshold: float = 1.0   # safe-set risk threshold
    u_cap: float = 1e6         # saturation value inside polygons / off road
    eps: float = 1e-3          # denominator floor (m)
    resolution: float = 0.5    # grid cell size (m)
    radius: float = 20.0       # sensing radius (m)
    tri_min_len: float = 2.0   # floor for triangle length (m)
    tri_headway: float = 1.0   # seconds of headway encoded per m/s of speed


class RoadModel:
    """Straight or polyline road; the centerline is the center of lane 0.

    Lanes are indexed 0 (ego's initial lane) upward toward the adjacent lane,
    offset to the left of the direction of travel.
    """

    def __init__(self, centerline, lane_count: int = 2, lane_width: float = 3.5):
        if lane_count < 1:
            raise ValueError("lane_count must be >= 1")
        if lane_width <= 0:
            raise ValueError("lane_width must be > 0")
        pts = np.asarray(centerline, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
            raise ValueError("centerline must be an (n>=2, 2) polyline")
        self.centerline = pts
        self.lane_count = lane_count
        self.lane_width = lane_width
        seg = np.diff(pts, axis=0)
        self._seg_len = np.linalg.norm(seg, axis=1)
        if np.any(self._seg_len <= 0):
            raise ValueError("degenerate centerline segment")
        self._seg_dir = seg / self._seg_len[:, None]
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @classmethod
    def straight(cls, length: float = 1000.0, lane_count: int = 2,
                 lane_width: float = 3.5, x0: float = -100.0):
        return cls([[x0, 0.0], [x0 + length, 0.0]], lane_count, lane_width)

    def station_offset(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Arclength station and signed lateral offset (+left) for (n,2) points."""
        pts = np.atleast_2d(points)
        a = self.centerline[:-1]
        d = self._seg_dir
        rel = pts[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("nmk,mk->nm", rel, d), 0.0, self._seg_len[None, :])
        proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
        dist = np.linalg.norm(pts[:, None, :] - proj, axis=2)
        idx = dist.argmin(axis=1)
        rows = np.arange(len(pts))
        s = self._cum[idx] + t[rows, idx]
        dd = d[idx]
        off = pts - proj[rows, idx]
        lat = dd[:, 0] * off[:, 1] - dd[:, 1] * off[:, 0]
        return s, lat

    def point_at(self, s: float, lateral: float = 0.0) -> np.ndarray:
        idx = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1,
                          0, len(self._seg_len) - 1))
        d = self._seg_dir[idx]
        base = self.centerline[idx] + (s - self._cum[idx]) * d
        normal = np.array([-d[1], d[0]])
        return base + lateral * normal

    def heading_at(self, s: float) -> float:
        idx = int(np.clip(np.searchsorted(self._cum, s, side="right") - 1,
                          0, len(self._seg_len) - 1))
        d = self._seg_dir[idx]
        return math.atan2(d[1], d[0])

    def lane_center_offset(self, lane_index: int) -> float:
        return lane_index * self.lane_width

    def lane_center(self, lane_index: int, s: float) -> np.ndarray:
        return self.point_at(s, self.lane_center_offset(lane_index))

    @property
    def right_edge_offset(self) -> float:
        return -0.5 * self.lane_width

    @property
    def left_edge_offset(self) -> float:
        return (self.lane_count - 0.5) * self.lane_width

    def edge_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance to the nearest road boundary; negative when off the road."""
        _, lat = self.station_offset(points)
        return np.minimum(lat - self.right_edge_offset, self.left_edge_offset - lat)


@dataclass(frozen=True)
class ObstacleVehicle:
    state: VehicleState
    geom: VehicleGeometry
    id: str = "obstacle"


@dataclass(frozen=True)
class SafetyTriangles:
    front_vertex: np.ndarray     # apex ahead of the front bumper
    rear_vertex: np.ndarray      # apex behind the rear bumper
    augmented_polygon: np.ndarray  # CCW hexagon: body rectangle + both triangles
    front_length: float
    rear_length: float


def velocity_triangles(obs: ObstacleVehicle, params: RiskParams = RiskParams(),
                       closing_speed: float = 0.0) -> SafetyTriangles:
    """Fore/aft safety triangles appended to the obstacle body rectangle.

    Triangle length along the heading is max(tri_min_len, headway * speed);
    the front triangle additionally accounts for the ego's closing speed.
    """
    st = obs.state
    hl = 0.5 * obs.geom.length
    hw = 0.5 * obs.geom.width
    rear_len = max(params.tri_min_len, params.tri_headway * st.v)
    front_len = max(params.tri_min_len,
                    params.tri_headway * max(st.v, closing_speed))

    c, s = math.cos(st.psi), math.sin(st.psi)
    rot = np.array([[c, -s], [s, c]])
    center = np.array([st.x, st.y])

    def world(p):
        return rot @ np.asarray(p) + center

    front_vertex = world([hl + front_len, 0.0])
    rear_vertex = world([-hl - rear_len, 0.0])
    polygon = np.array([
        world([hl, hw]),
        world([-hl, hw]),
        rear_vertex,
        world([-hl, -hw]),
        world([hl, -hw]),
        front_vertex,
    ])
    return SafetyTriangles(front_vertex=front_vertex, rear_vertex=rear_vertex,
                           augmented_polygon=polygon,
                           front_length=front_len, rear_length=rear_len)


def risk_values(points: np.ndarray, road: RoadModel,
                obstacles: list[SafetyTriangles],
                params: RiskParams = RiskParams()) -> np.ndarray:
    """Combined risk U for (n,2) points: sum of obstacle and road-edge terms."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    u = np.zeros(len(pts))

    d_edge = road.edge_distance(pts)
    off_road = d_edge <= 0.0
    de = np.maximum(d_edge, params.eps)
    u += params.a_road * np.exp(-params.alpha_road * de) / de
    u[off_road] = params.u_cap

    for tri in obstacles:
        poly = tri.augmented_polygon
        inside = points_in_convex_polygon(pts, poly)
        d = np.maximum(points_to_segments_distance(pts, poly), params.eps)
        u += params.a_obs * np.exp(-params.alpha_obs * d) / d
        u[inside] = params.u_cap

    return np.minimum(u, params.u_cap)


def risk_at(p, road: RoadModel, obstacles: list[SafetyTriangles],
            params: RiskParams = RiskParams()) -> float:
    """Risk at a single world point."""
    return float(risk_values(np.asarray(p, dtype=float)[None, :], road,
                             obstacles, params)[0])


@dataclass
class RiskGrid:
    origin: np.ndarray        # world position of cell (0, 0)
    resolution: float
    radius: float
    values: np.ndarray        # (ny, nx) risk values, u_cap outside the disk
    disk_mask: np.ndarray     # (ny, nx) cells within the sensing radius

    def cell_centers(self) -> np.ndarray:
        ny, nx = self.values.shape
        xs = self.origin[0] + np.arange(nx) * self.resolution
        ys = self.origin[1] + np.arange(ny) * self.resolution
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def index_of(self, p) -> tuple[int, int] | None:
        ix = round((p[0] - self.origin[0]) / self.resolution)
        iy = round((p[1] - self.origin[1]) / self.resolution)
        ny, nx = self.values.shape
        if 0 <= ix < nx and 0 <= iy < ny:
            return iy, ix
        return None

    def to_csv(self, path) -> None:
        centers = self.cell_centers()
        vals = self.values.ravel()
        keep = self.disk_mask.ravel()
        with open(path, "w") as f:
            f.write("x,y,u\n")
            for (x, y), u in zip(centers[keep], vals[keep]):
                f.write(f"{float(x)!r},{float(y)!r},{float(u)!r}\n")


@dataclass
class SafeSet:
    points: np.ndarray        # (n, 2) safe cell centers
    grid: RiskGrid
    safe_mask: np.ndarray     # (ny, nx) bool, True where U <= threshold within the disk
    indices: np.ndarray = field(default=None)  # row-major flat index of each safe point

    @property
    def is_empty(self) -> bool:
        return len(self.points) == 0

    def contains(self, p) -> bool:
        idx = self.grid.index_of(p)
        return idx is not None and bool(self.safe_mask[idx])


def build_safe_set(ev: VehicleState, road: RoadModel,
                   obstacles: list[SafetyTriangles],
                   params: RiskParams = RiskParams()) -> tuple[RiskGrid, SafeSet]:
    """Risk grid of the sensing disk around the EV and its sub-threshold safe set.

    Cell centers snap to the global resolution lattice so that the lattice is
    stable as the EV moves (translation by a multiple of the resolution shifts
    the set exactly).
    """
    res = params.resolution
    n = int(math.ceil(params.radius / res))
    cx = round(ev.x / res) * res
    cy = round(ev.y / res) * res
    origin = np.array([cx - n * res, cy - n * res])

    side = 2 * n + 1
    xs = origin[0] + np.arange(side) * res
    ys = origin[1] + np.arange(side) * res
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)

    disk = (centers[:, 0] - ev.x) ** 2 + (centers[:, 1] - ev.y) ** 2 <= params.radius ** 2
    values = np.full(side * side, params.u_cap)
    values[disk] = risk_values(centers[disk], road, obstacles, params)

    values = values.reshape(side, side)
    disk_mask = disk.reshape(side, side)
    grid = RiskGrid(origin=origin, resolution=res, radius=params.radius,
                    values=values, disk_mask=disk_mask)

    safe_mask = disk_mask & (values <= params.u_threshold)
    flat = safe_mask.ravel()
    safe_set = SafeSet(points=centers[flat], grid=grid, safe_mask=safe_mask,
                       indices=np.nonzero(flat)[0])
    return grid, safe_set
