from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtp.geometry import Box3D, bev_intersection_area, center_distance_2d, iou3d, wrap_angle
from oracles import mc_iou3d


def unit_cube(x=0.0, y=0.0, z=0.0, yaw=0.0):
    return Box3D(x, y, z, 1.0, 1.0, 1.0, yaw)


coord = st.floats(-20, 20, allow_nan=False)
dim = st.floats(0.3, 6.0, allow_nan=False)
angle = st.floats(-10, 10, allow_nan=False)
boxes = st.builds(Box3D, coord, coord, st.floats(-2, 2), dim, dim, dim, angle)


def near_pair(draw_box, offset):
    """Second box near the first so that overlaps are common."""
    return st.builds(lambda b, dx, dy, dz, l, w, h, yaw: Box3D(b.cx + dx, b.cy + dy, b.cz + dz, l, w, h, yaw),
                     st.just(draw_box), offset, offset, st.floats(-1, 1), dim, dim, dim, angle)


@st.composite
def box_pairs(draw):
    a = draw(boxes)
    b = draw(near_pair(a, st.floats(-3, 3)))
    return a, b


class TestBox3D:
    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError, match="width"):
            Box3D(0, 0, 0, 1.0, 0.0, 1.0)

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="cx"):
            Box3D(float("nan"), 0, 0, 1, 1, 1)

    def test_yaw_normalized(self):
        assert Box3D(0, 0, 0, 1, 1, 1, 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)

    def test_list_round_trip(self):
        b = Box3D(1.5, -2.0, 0.75, 4.0, 1.8, 1.5, 0.3)
        assert Box3D.from_list(b.as_list()) == b

    def test_from_list_wrong_length(self):
        with pytest.raises(ValueError):
            Box3D.from_list([1, 2, 3])

    @given(angle)
    def test_wrap_angle_range_and_idempotence(self, a):
        w = wrap_angle(a)
        assert -math.pi <= w < math.pi
        assert wrap_angle(w) == w
        assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-9)
        assert math.isclose(math.sin(w), math.sin(a), abs_tol=1e-9)


class TestIoUExamples:
    def test_identical_boxes(self):
        b = Box3D(3, 4, 1, 4.0, 1.8, 1.5, 0.7)
        assert iou3d(b, b) == 1.0

    def test_unit_cubes_half_offset(self):
        # intersection 0.5, union 1.5
        assert iou3d(unit_cube(), unit_cube(x=0.5)) == pytest.approx(1 / 3, abs=1e-9)

    def test_half_offset_matches_monte_carlo(self):
        est = mc_iou3d(unit_cube(), unit_cube(x=0.5), 1 << 21, seed=1, qmc=True)
        assert est == pytest.approx(1 / 3, abs=1e-3)

    def test_disjoint(self):
        assert iou3d(unit_cube(), unit_cube(x=5.0)) == 0.0

    def test_face_contact_is_zero(self):
        assert iou3d(unit_cube(), unit_cube(x=1.0)) == 0.0

    def test_vertical_separation(self):
        assert iou3d(unit_cube(), unit_cube(z=1.5)) == 0.0

    def test_rotated_square_inside_square(self):
        # a square rotated by 45 degrees inscribed in a bigger square
        big = Box3D(0, 0, 0, 2.0, 2.0, 1.0)
        diamond = Box3D(0, 0, 0, math.sqrt(2), math.sqrt(2), 1.0, math.pi / 4)
        assert iou3d(big, diamond) == pytest.approx(0.5, abs=1e-12)

    def test_quarter_turn_of_square_is_identity(self):
        a = Box3D(1, 2, 0, 2.0, 2.0, 1.0, 0.0)
        b = Box3D(1, 2, 0, 2.0, 2.0, 1.0, math.pi / 2)
        assert iou3d(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_bev_area_of_half_overlap(self):
        assert bev_intersection_area(unit_cube(), unit_cube(x=0.5)) == pytest.approx(0.5)

    def test_center_distance(self):
        assert center_distance_2d(unit_cube(), unit_cube(x=3.0, y=4.0, z=9.0)) == 5.0


class TestIoUProperties:
    @settings(max_examples=300)
    @given(box_pairs())
    def test_range_and_symmetry(self, pair):
        a, b = pair
        v = iou3d(a, b)
        assert 0.0 <= v <= 1.0
        assert abs(v - iou3d(b, a)) <= 1e-6

    @settings(max_examples=300)
    @given(box_pairs(), st.floats(-50, 50), st.floats(-50, 50), st.floats(-5, 5), angle)
    def test_rigid_invariance(self, pair, tx, ty, tz, rot):
        a, b = pair

        def move(box):
            c, s = math.cos(rot), math.sin(rot)
            return Box3D(c * box.cx - s * box.cy + tx, s * box.cx + c * box.cy + ty, box.cz + tz,
                         box.length, box.width, box.height, box.yaw + rot)

        assert abs(iou3d(move(a), move(b)) - iou3d(a, b)) <= 1e-6

    @settings(max_examples=100)
    @given(boxes)
    def test_self_iou_is_one(self, b):
        assert iou3d(b, b) == 1.0

    @settings(max_examples=100)
    @given(box_pairs())
    def test_intersection_bounded_by_smaller_footprint(self, pair):
        a, b = pair
        area = bev_intersection_area(a, b)
        assert area <= min(a.length * a.width, b.length * b.width) + 1e-9
