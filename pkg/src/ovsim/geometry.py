"""2-D polygon helpers: rectangles, point-in-polygon, convex polygon distance.

Polygons are (m, 2) float arrays of vertices in counter-clockwise order.
"""

from __future__ import annotations

import math

import numpy as np


def rectangle_corners(cx: float, cy: float, heading: float,
                      length: float, width: float) -> np.ndarray:
    """CCW corners of an oriented rectangle centered at (cx, cy)."""
    hl, hw = 0.5 * length, 0.5 * width
    c, s = math.cos(heading), math.sin(heading)
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area (positive for CCW)."""
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def points_to_segments_distance(points: np.ndarray, verts: np.ndarray) -> np.ndarray:
    """Min distance from each point to the closed polyline through verts.

    points: (n, 2); verts: (m, 2) treated as a closed loop. Returns (n,).
    """
    a = verts
    b = np.roll(verts, -1, axis=0)
    ab = b - a                                   # (m, 2)
    ab_len2 = np.maximum(np.sum(ab * ab, axis=1), 1e-300)
    ap = points[:, None, :] - a[None, :, :]      # (n, m, 2)
    t = np.clip(np.einsum("nmk,mk->nm", ap, ab) / ab_len2, 0.0, 1.0)
    closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
    d = np.linalg.norm(points[:, None, :] - closest, axis=2)
    return d.min(axis=1)


def points_in_convex_polygon(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Boundary-inclusive membership test for a convex CCW polygon. Returns (n,) bool."""
    a = poly
    b = np.roll(poly, -1, axis=0)
    edge = b - a
    rel = points[:, None, :] - a[None, :, :]
    cross = edge[None, :, 0] * rel[:, :, 1] - edge[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= -1e-9, axis=1)


def points_in_polygon(points: np.ndarray, poly: np.ndarray,
                      boundary_tol: float = 1e-9) -> np.ndarray:
    """Ray-casting membership test for a simple polygon, boundary counted inside.

    Horizontal ray toward +x; boundary points resolved toward inclusion by an
    explicit distance-to-edge check within boundary_tol.
    """
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    ax, ay = poly[:, 0][None, :], poly[:, 1][None, :]
    bx = np.roll(poly[:, 0], -1)[None, :]
    by = np.roll(poly[:, 1], -1)[None, :]

    straddles = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_at = ax + (py - ay) * (bx - ax) / (by - ay)
    crossings = np.sum(straddles & (px < x_at), axis=1)
    inside = (crossings % 2) == 1

    on_edge = points_to_segments_distance(points, poly) <= boundary_tol
    return inside | on_edge


def _sat_separated(poly_a: np.ndarray, poly_b: np.ndarray) -> bool:
    """True if a separating axis exists between two convex polygons."""
    for poly in (poly_a, poly_b):
        edges = np.roll(poly, -1, axis=0) - poly
        axes = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        pa = poly_a @ axes.T
        pb = poly_b @ axes.T
        if np.any((pa.max(axis=0) < pb.min(axis=0)) | (pb.max(axis=0) < pa.min(axis=0))):
            return True
    return False


def convex_polygon_distance(poly_a: np.ndarray, poly_b: np.ndarray) -> float:
    """Exact Euclidean distance between two convex polygons; 0 when they touch or overlap.

    For disjoint convex polygons the minimum is attained at a vertex/edge pair,
    so checking each polygon's vertices against the other's edges is exact.
    """
    if not _sat_separated(poly_a, poly_b):
        return 0.0
    d_ab = points_to_segments_distance(poly_a, poly_b).min()
    d_ba = points_to_segments_distance(poly_b, poly_a).min()
    return float(min(d_ab, d_ba))
