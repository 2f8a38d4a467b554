import math

import numpy as np
import pytest

from mtvcbf.errors import DomainError
from mtvcbf.geometry import (
    OrientedRectangle,
    c2c_margin,
    enclosing_radius,
    exact_intersect,
    mtv_margin,
    mtv_margin_batch,
    project_gap,
    rectangle_vertices,
    wrap_angle,
    wrap_angles,
)

LENGTH = 0.16
WIDTH = 0.08
SAMPLE_RECT = OrientedRectangle(0.0, 0.0, 0.0, LENGTH, WIDTH)


def _rect(x, y, psi, length=LENGTH, width=WIDTH):
    return OrientedRectangle(x, y, psi, length, width)


def _random_rect(rng):
    return _rect(rng.uniform(-0.48, 0.48), rng.uniform(-0.48, 0.48), rng.uniform(-math.pi, math.pi))


def _reference_margin(rect_i, rect_j):
    """Plain-loop trace of the margin: projections, per-rectangle fold, pair fold"""
    def corners(rect):
        c, s = math.cos(rect.heading), math.sin(rect.heading)
        out = []
        for lx, ly in ((1, 1), (-1, 1), (-1, -1), (1, -1)):
            px, py = 0.5 * rect.length * lx, 0.5 * rect.width * ly
            out.append((rect.center_x + c * px - s * py, rect.center_y + s * px + c * py))
        return out

    def gap(axis, a, b):
        pa = [axis[0] * x + axis[1] * y for x, y in a]
        pb = [axis[0] * x + axis[1] * y for x, y in b]
        return max(min(pb) - max(pa), min(pa) - max(pb))

    def fold(g1, g2):
        if g1 > 0 and g2 > 0:
            return math.sqrt(g1 * g1 + g2 * g2)
        if g1 < 0 and g2 < 0:
            return -min(abs(g1), abs(g2))
        return max(g1, g2)

    a, b = corners(rect_i), corners(rect_j)
    ds = []
    for rect in (rect_i, rect_j):
        c, s = math.cos(rect.heading), math.sin(rect.heading)
        ds.append(fold(gap((c, s), a, b), gap((-s, c), a, b)))
    d_i, d_j = ds
    if d_i > 0 and d_j > 0:
        return min(d_i, d_j)
    if d_i < 0 and d_j < 0:
        return -min(abs(d_i), abs(d_j))
    return max(d_i, d_j)


def test_wrap_angle_range():
    """Angles wrap into (-pi, pi] with -pi mapped to pi"""
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(2.0 * math.pi + 0.1) == pytest.approx(0.1, abs=1e-12)
    angles = np.array([-math.pi, -3.5, 0.0, 3.5, 7.0])
    np.testing.assert_allclose(wrap_angles(angles), [wrap_angle(a) for a in angles], atol=1e-12)


def test_rectangle_rejects_degenerate_dimensions():
    """Zero or negative dimensions are rejected"""
    with pytest.raises(DomainError):
        _rect(0.0, 0.0, 0.0, length=0.0)
    with pytest.raises(DomainError):
        _rect(0.0, 0.0, 0.0, width=-0.1)
    with pytest.raises(DomainError):
        _rect(float("nan"), 0.0, 0.0)


def test_rectangle_vertices_axis_aligned():
    """Corners are counter-clockwise from front-left"""
    expected = [(0.08, 0.04), (-0.08, 0.04), (-0.08, -0.04), (0.08, -0.04)]
    np.testing.assert_allclose(rectangle_vertices(SAMPLE_RECT), expected, atol=1e-15)


def test_rectangle_vertices_half_turn():
    """A half turn maps the vertex set onto itself"""
    turned = rectangle_vertices(_rect(1.0, 2.0, math.pi))
    straight = rectangle_vertices(_rect(1.0, 2.0, 0.0))
    order = lambda v: v[np.lexsort((v[:, 1], v[:, 0]))]
    np.testing.assert_allclose(order(turned), order(straight), atol=1e-12)


def test_rectangle_vertices_distance_from_center():
    """Square corners sit at half the diagonal"""
    vertices = rectangle_vertices(_rect(0.0, 0.0, math.pi / 4, 0.1, 0.1))
    np.testing.assert_allclose(np.linalg.norm(vertices, axis=1), 0.070710678, atol=1e-9)


@pytest.mark.parametrize("offset, axis, expected", [
    ((3.0, 0.0), (1.0, 0.0), 2.0),
    ((3.0, 0.0), (0.0, 1.0), -1.0),
    ((0.8, 0.0), (1.0, 0.0), -0.2),
])
def test_project_gap_unit_squares(offset, axis, expected):
    """Separated, fully overlapping and partially overlapping intervals"""
    a = _rect(0.0, 0.0, 0.0, 1.0, 1.0)
    b = _rect(offset[0], offset[1], 0.0, 1.0, 1.0)
    assert project_gap(a, b, axis) == pytest.approx(expected, abs=1e-12)


def test_mtv_margin_identical_pose():
    """Full overlap gives minus the width"""
    result = mtv_margin(SAMPLE_RECT, SAMPLE_RECT)
    assert result.value == pytest.approx(-0.08, abs=1e-12)
    assert not result.separated


def test_mtv_margin_face_gap():
    """Axis-aligned pair 0.30 apart has a 0.14 face gap"""
    result = mtv_margin(SAMPLE_RECT, _rect(0.30, 0.0, 0.0))
    assert result.value == pytest.approx(0.14, abs=1e-12)
    assert result.separated
    np.testing.assert_allclose(result.achieving_axis, (1.0, 0.0), atol=1e-15)


def test_mtv_margin_matches_reference_trace():
    """Rotated pair agrees with a plain-loop trace"""
    rect_j = _rect(0.20, 0.15, math.pi / 6)
    assert mtv_margin(SAMPLE_RECT, rect_j).value == pytest.approx(_reference_margin(SAMPLE_RECT, rect_j), abs=1e-12)

    rng = np.random.default_rng(3)
    for _ in range(500):
        a, b = _random_rect(rng), _random_rect(rng)
        assert mtv_margin(a, b).value == pytest.approx(_reference_margin(a, b), abs=1e-12)


def test_mtv_margin_touching_faces():
    """Face gap of exactly zero"""
    assert abs(mtv_margin(SAMPLE_RECT, _rect(0.16, 0.0, 0.0)).value) <= 1e-12


def test_exact_intersect_examples():
    """Identical poses intersect, the 0.14 gap pair does not"""
    assert exact_intersect(SAMPLE_RECT, SAMPLE_RECT)
    assert not exact_intersect(SAMPLE_RECT, _rect(0.30, 0.0, 0.0))
    assert exact_intersect(SAMPLE_RECT, _rect(0.0, 0.0, 0.0, 0.04, 0.02))


def test_sign_agrees_with_exact_intersection():
    """A hundred thousand random pairs: negative margin iff the rectangles intersect"""
    rng = np.random.default_rng(0)
    checked = 0
    for _ in range(100_000):
        a, b = _random_rect(rng), _random_rect(rng)
        value = mtv_margin(a, b).value
        if abs(value) <= 1e-9:
            continue
        assert (value < 0) == exact_intersect(a, b)
        checked += 1
    assert checked > 95_000


def test_symmetry_and_rigid_motion_invariance():
    """Swapping the rectangles or moving both rigidly leaves the value unchanged"""
    rng = np.random.default_rng(1)
    for _ in range(2000):
        a, b = _random_rect(rng), _random_rect(rng)
        value = mtv_margin(a, b).value
        assert mtv_margin(b, a).value == pytest.approx(value, abs=1e-9)

        theta, tx, ty = rng.uniform(-math.pi, math.pi), rng.uniform(-5, 5), rng.uniform(-5, 5)
        c, s = math.cos(theta), math.sin(theta)

        def move(rect):
            return _rect(c * rect.center_x - s * rect.center_y + tx, s * rect.center_x + c * rect.center_y + ty,
                         rect.heading + theta)

        assert mtv_margin(move(a), move(b)).value == pytest.approx(value, abs=1e-9)


def test_translation_along_achieving_axis_separates():
    """Moving j by the penetration depth along the achieving axis removes the overlap"""
    rng = np.random.default_rng(2)
    tested = 0
    while tested < 500:
        a = _rect(0.0, 0.0, rng.uniform(-math.pi, math.pi))
        b = _rect(rng.uniform(-0.15, 0.15), rng.uniform(-0.1, 0.1), rng.uniform(-math.pi, math.pi))
        result = mtv_margin(a, b)
        if result.value >= 0:
            continue
        axis = result.achieving_axis
        proj_a = rectangle_vertices(a) @ axis
        proj_b = rectangle_vertices(b) @ axis
        direction = 1.0 if proj_b.min() - proj_a.max() >= proj_a.min() - proj_b.max() else -1.0
        shift = direction * abs(result.value) * axis
        moved = _rect(b.center_x + shift[0], b.center_y + shift[1], b.heading)
        assert mtv_margin(a, moved).value >= -1e-9
        tested += 1


def test_batch_margin_matches_scalar():
    """Vectorized margin for an ego at the origin agrees with the scalar version"""
    rng = np.random.default_rng(4)
    x, y = rng.uniform(-0.48, 0.48, 500), rng.uniform(-0.48, 0.48, 500)
    psi = rng.uniform(-math.pi, math.pi, 500)
    batch = mtv_margin_batch(x, y, psi, LENGTH, WIDTH)
    scalar = [mtv_margin(SAMPLE_RECT, _rect(*pose)).value for pose in zip(x, y, psi)]
    np.testing.assert_allclose(batch, scalar, rtol=0.0, atol=1e-12)


def test_c2c_margin_examples():
    """Center distance minus twice the enclosing radius"""
    assert c2c_margin(0.5, 0.0, LENGTH, WIDTH) == pytest.approx(0.321115, abs=1e-6)
    assert c2c_margin(0.0, 0.0, LENGTH, WIDTH) == pytest.approx(-0.178885, abs=1e-6)
    radius = enclosing_radius(LENGTH, WIDTH)
    assert c2c_margin(2.0 * radius, 0.0, LENGTH, WIDTH) == pytest.approx(0.0, abs=1e-15)
    assert c2c_margin(0.3, -0.4, LENGTH, WIDTH) + 2.0 * radius == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(DomainError):
        c2c_margin(1.0, 0.0, 0.0, WIDTH)


def test_c2c_margin_negative_whenever_rectangles_touch():
    """Intersecting footprints always give a non-positive C2C margin"""
    rng = np.random.default_rng(5)
    for _ in range(2000):
        b = _random_rect(rng)
        if exact_intersect(SAMPLE_RECT, b):
            assert c2c_margin(b.center_x, b.center_y, LENGTH, WIDTH) <= 1e-12
