"""Rectangle footprints, the MTV-based safety margin and the C2C baseline margin"""

import math
import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle into (-pi, pi]"""
    wrapped = math.remainder(float(angle), TWO_PI)
    if wrapped <= -math.pi:
        wrapped += TWO_PI
    return wrapped


def wrap_angles(angles: np.ndarray) -> np.ndarray:
    """Vectorized wrap_angle"""
    return np.pi - np.mod(np.pi - np.asarray(angles, dtype=float), TWO_PI)


@dataclass(frozen=True)
class OrientedRectangle:
    """Pose and dimensions of a robot footprint"""

    center_x: float
    center_y: float
    heading: float
    length: float
    width: float

    def __post_init__(self):
        fields = (self.center_x, self.center_y, self.heading, self.length, self.width)
        if not all(math.isfinite(value) for value in fields):
            raise DomainError(f"Rectangle fields must be finite, got {fields}")
        if self.length <= 0 or self.width <= 0:
            raise DomainError(
                f"Rectangle dimensions must be positive, got length={self.length} width={self.width}"
            )
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.center_x, self.center_y])

    def body_axes(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unit vectors along the rectangle's length (x) and width (y)"""
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([c, s]), np.array([-s, c])


@dataclass(frozen=True)
class MarginResult:
    """Signed MTV margin plus the body axis that realized it"""

    value: float
    achieving_axis: np.ndarray
    separated: bool


def rectangle_vertices(rect: OrientedRectangle) -> np.ndarray:
    """Corners of the rectangle, counter-clockwise from front-left, shape (4, 2)"""
    half_l = 0.5 * rect.length
    half_w = 0.5 * rect.width
    local = np.array([
        [half_l, half_w],
        [-half_l, half_w],
        [-half_l, -half_w],
        [half_l, -half_w],
    ])
    c, s = math.cos(rect.heading), math.sin(rect.heading)
    rotation = np.array([[c, -s], [s, c]])
    return local @ rotation.T + rect.center


def _axis_gaps(vertices_a: np.ndarray, vertices_b: np.ndarray, axes: np.ndarray) -> np.ndarray:
    """Signed projection gap on each axis.

    Shapes: vertices (..., 4, 2), axes (..., k, 2) -> gaps (..., k). Separated
    intervals give their positive distance; overlapping intervals give minus the
    depth needed to separate them along the axis.
    """
    proj_a = np.einsum("...vd,...kd->...kv", vertices_a, axes)
    proj_b = np.einsum("...vd,...kd->...kv", vertices_b, axes)
    return np.maximum(proj_b.min(axis=-1) - proj_a.max(axis=-1),
                      proj_a.min(axis=-1) - proj_b.max(axis=-1))


def project_gap(rect_a: OrientedRectangle, rect_b: OrientedRectangle, axis) -> float:
    """Signed gap between the projections of two rectangles on a unit axis"""
    axis = np.asarray(axis, dtype=float).reshape(1, 2)
    gap = _axis_gaps(rectangle_vertices(rect_a), rectangle_vertices(rect_b), axis)
    return float(gap[0])


def _fold_axis_gaps(g_x: float, g_y: float) -> Tuple[float, int]:
    """Combine the two gaps of one rectangle's axes; returns (d_k, index of the axis used)"""
    if g_x > 0 and g_y > 0:
        return math.hypot(g_x, g_y), 0 if g_x >= g_y else 1
    if g_x < 0 and g_y < 0:
        if abs(g_x) <= abs(g_y):
            return -abs(g_x), 0
        return -abs(g_y), 1
    return (g_x, 0) if g_x >= g_y else (g_y, 1)


def _fold_rectangles(d_i: float, d_j: float) -> Tuple[float, int]:
    """Combine the per-rectangle margins; returns (d_MTV, 0 for rectangle i or 1 for j)"""
    if d_i > 0 and d_j > 0:
        return (d_i, 0) if d_i <= d_j else (d_j, 1)
    if d_i < 0 and d_j < 0:
        return (-abs(d_i), 0) if abs(d_i) <= abs(d_j) else (-abs(d_j), 1)
    return (d_i, 0) if d_i >= d_j else (d_j, 1)


def mtv_margin(rect_i: OrientedRectangle, rect_j: OrientedRectangle) -> MarginResult:
    """Heading-aware safety margin of two rectangles.

    Positive values are a separation distance, negative values a penetration
    depth. For each rectangle the gaps along its two body axes are folded into
    d_k, then d_i and d_j are folded into the returned value. Ties prefer the
    x-axis and rectangle i.
    """
    axes = np.array([*rect_i.body_axes(), *rect_j.body_axes()])
    gaps = _axis_gaps(rectangle_vertices(rect_i), rectangle_vertices(rect_j), axes)

    d_i, axis_i = _fold_axis_gaps(float(gaps[0]), float(gaps[1]))
    d_j, axis_j = _fold_axis_gaps(float(gaps[2]), float(gaps[3]))
    value, owner = _fold_rectangles(d_i, d_j)

    achieving_axis = axes[axis_i] if owner == 0 else axes[2 + axis_j]
    return MarginResult(value=value, achieving_axis=achieving_axis, separated=value > 0)


def _fold_axis_gaps_batch(g_x: np.ndarray, g_y: np.ndarray) -> np.ndarray:
    both_separated = (g_x > 0) & (g_y > 0)
    both_overlapping = (g_x < 0) & (g_y < 0)
    return np.where(
        both_separated,
        np.hypot(g_x, g_y),
        np.where(both_overlapping, -np.minimum(np.abs(g_x), np.abs(g_y)), np.maximum(g_x, g_y)),
    )


def _fold_rectangles_batch(d_i: np.ndarray, d_j: np.ndarray) -> np.ndarray:
    both_separated = (d_i > 0) & (d_j > 0)
    both_overlapping = (d_i < 0) & (d_j < 0)
    return np.where(
        both_separated,
        np.minimum(d_i, d_j),
        np.where(both_overlapping, -np.minimum(np.abs(d_i), np.abs(d_j)), np.maximum(d_i, d_j)),
    )


def mtv_margin_batch(x_rel, y_rel, psi_rel, length: float, width: float) -> np.ndarray:
    """mtv_margin for many relative poses of equal rectangles, ego at the origin with heading 0"""
    x_rel = np.atleast_1d(np.asarray(x_rel, dtype=float))
    y_rel = np.atleast_1d(np.asarray(y_rel, dtype=float))
    psi_rel = np.atleast_1d(np.asarray(psi_rel, dtype=float))
    count = x_rel.shape[0]

    half_l, half_w = 0.5 * length, 0.5 * width
    local = np.array([[half_l, half_w], [-half_l, half_w], [-half_l, -half_w], [half_l, -half_w]])

    c, s = np.cos(psi_rel), np.sin(psi_rel)
    rotations = np.stack([np.stack([c, -s], axis=-1), np.stack([s, c], axis=-1)], axis=-2)
    vertices_j = np.einsum("vd,ned->nve", local, rotations) + np.stack([x_rel, y_rel], axis=-1)[:, None, :]
    vertices_i = np.broadcast_to(local, (count, 4, 2))

    axes = np.empty((count, 4, 2))
    axes[:, 0] = (1.0, 0.0)
    axes[:, 1] = (0.0, 1.0)
    axes[:, 2, 0], axes[:, 2, 1] = c, s
    axes[:, 3, 0], axes[:, 3, 1] = -s, c

    gaps = _axis_gaps(vertices_i, vertices_j, axes)
    d_i = _fold_axis_gaps_batch(gaps[:, 0], gaps[:, 1])
    d_j = _fold_axis_gaps_batch(gaps[:, 2], gaps[:, 3])
    return _fold_rectangles_batch(d_i, d_j)


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(p, q, r) -> bool:
    """Whether collinear point q lies on segment pr"""
    return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and ((d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)):
        return True
    if d1 == 0 and _on_segment(q1, p1, q2):
        return True
    if d2 == 0 and _on_segment(q1, p2, q2):
        return True
    if d3 == 0 and _on_segment(p1, q1, p2):
        return True
    if d4 == 0 and _on_segment(p1, q2, p2):
        return True
    return False


def _contains(polygon: List[Tuple[float, float]], point: Tuple[float, float]) -> bool:
    """Point-in-closed-polygon test for a counter-clockwise convex polygon"""
    count = len(polygon)
    return all(_cross(polygon[k], polygon[(k + 1) % count], point) >= 0 for k in range(count))


def exact_intersect(rect_i: OrientedRectangle, rect_j: OrientedRectangle) -> bool:
    """Whether the closed rectangles share a point.

    Uses edge-edge intersection plus containment and no projections, so it can
    check the SAT-based margin independently.
    """
    poly_i = [tuple(p) for p in rectangle_vertices(rect_i).tolist()]
    poly_j = [tuple(p) for p in rectangle_vertices(rect_j).tolist()]
    for a in range(4):
        for b in range(4):
            if _segments_intersect(poly_i[a], poly_i[(a + 1) % 4], poly_j[b], poly_j[(b + 1) % 4]):
                return True
    return _contains(poly_i, poly_j[0]) or _contains(poly_j, poly_i[0])


def enclosing_radius(length: float, width: float) -> float:
    """Radius of the smallest circle around a length x width rectangle"""
    return 0.5 * math.hypot(length, width)


def c2c_margin(rel_x: float, rel_y: float, length: float, width: float) -> float:
    """Center distance minus twice the enclosing radius"""
    if length <= 0 or width <= 0:
        raise DomainError(f"Dimensions must be positive, got length={length} width={width}")
    return math.hypot(rel_x, rel_y) - 2.0 * enclosing_radius(length, width)
