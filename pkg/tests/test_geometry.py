import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotdet.geometry import (
    InvalidBoxError,
    Quad,
    RotatedBox,
    canonicalize,
    clip_convex,
    point_in_rbox,
    polygon_area,
    rbox_to_corners,
    rbox_to_quad,
    skew_iou,
)
from rotdet.oracles import monte_carlo_iou, quad_contains
from rotdet.sampling import perturb_box, random_box

SQRT2 = math.sqrt(2.0)

coord = st.floats(-500, 500)
extent = st.floats(0.5, 200)
angle = st.floats(-10, 10)
boxes = st.builds(RotatedBox, coord, coord, extent, extent, angle)


def unit_square(theta=0.0):
    return rbox_to_corners(RotatedBox(0.0, 0.0, 1.0, 1.0, theta))


class TestRotatedBox:
    @pytest.mark.parametrize("args", [(0, 0, 0, 1, 0), (0, 0, 1, -2, 0), (0, math.nan, 1, 1, 0), (0, 0, 1, 1, math.inf)])
    def test_invalid(self, args):
        with pytest.raises(InvalidBoxError):
            RotatedBox(*args)

    def test_array_round_trip(self):
        b = RotatedBox(1.5, -2.0, 3.0, 4.0, 0.25)
        assert RotatedBox.from_array(b.as_array()) == b


class TestCanonicalize:
    def test_quarter_turn(self):
        assert canonicalize(RotatedBox(0, 0, 4, 2, math.pi / 2)) == RotatedBox(0, 0, 2, 4, 0.0)

    def test_identity(self):
        assert canonicalize(RotatedBox(0, 0, 4, 2, 0.0)) == RotatedBox(0, 0, 4, 2, 0.0)

    def test_half_turn(self):
        assert canonicalize(RotatedBox(0, 0, 4, 2, math.pi)) == RotatedBox(0, 0, 4, 2, 0.0)

    def test_negative_angle(self):
        c = canonicalize(RotatedBox(0, 0, 4, 2, -0.1))
        assert c.theta == pytest.approx(math.pi / 2 - 0.1)
        assert (c.w, c.h) == (2, 4)

    @given(boxes)
    def test_idempotent_and_in_range(self, b):
        c = canonicalize(b)
        assert 0.0 <= c.theta < math.pi / 2
        assert canonicalize(c) == c

    @given(boxes)
    @settings(max_examples=50)
    def test_same_point_set(self, b):
        c = canonicalize(b)
        assert skew_iou(b, c) == pytest.approx(1.0, abs=1e-9)
        # corner sets coincide up to ordering
        pa = np.round(rbox_to_corners(b), 6)
        pc = np.round(rbox_to_corners(c), 6)
        assert sorted(map(tuple, pa)) == pytest.approx(sorted(map(tuple, pc)), abs=1e-5)


class TestQuad:
    def test_axis_aligned(self):
        q = rbox_to_quad(RotatedBox(0, 0, 2, 2, 0))
        np.testing.assert_allclose(q.vertices, [(-1, -1), (1, -1), (1, 1), (-1, 1)])

    def test_translated(self):
        q = rbox_to_quad(RotatedBox(5, 5, 2, 2, 0))
        np.testing.assert_allclose(q.vertices, [(4, 4), (6, 4), (6, 6), (4, 6)])

    def test_rotated_quarter_pi(self):
        # rotation matrix applied by hand to the corners (+-1, +-1)
        c = s = math.cos(math.pi / 4)
        expected = [(x * c - y * s, x * s + y * c) for x, y in [(-1, -1), (1, -1), (1, 1), (-1, 1)]]
        q = rbox_to_quad(RotatedBox(0, 0, 2, 2, math.pi / 4))
        np.testing.assert_allclose(q.vertices, expected, atol=1e-12)
        np.testing.assert_allclose(q.vertices, [(0, -SQRT2), (SQRT2, 0), (0, SQRT2), (-SQRT2, 0)], atol=1e-12)

    @given(boxes)
    @settings(max_examples=50)
    def test_ccw_and_centroid(self, b):
        q = rbox_to_quad(b)
        assert q.vertices.mean(axis=0) == pytest.approx([b.cx, b.cy], abs=1e-9)
        assert polygon_area(q.vertices) == pytest.approx(b.area, rel=1e-9)

    def test_from_points_fixes_winding(self):
        cw = [(0, 0), (0, 5), (10, 5), (10, 0)]
        q = Quad.from_points(cw)
        x, y = q.vertices[:, 0], q.vertices[:, 1]
        assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0

    def test_from_points_reorders_bowtie(self):
        q = Quad.from_points([(0, 0), (10, 5), (10, 0), (0, 5)])
        assert q.area == pytest.approx(50)

    def test_from_points_rejects_nonconvex(self):
        with pytest.raises(InvalidBoxError):
            Quad.from_points([(0, 0), (10, 0), (2, 2), (0, 10)])


class TestPointInBox:
    @pytest.mark.parametrize("theta", [0.0, 0.3, 1.2, 5.0])
    def test_center_inside(self, theta):
        assert point_in_rbox((0, 0), RotatedBox(0, 0, 4, 2, theta))

    def test_just_outside(self):
        assert not point_in_rbox((2.01, 0), RotatedBox(0, 0, 4, 2, 0))

    def test_boundary_inside(self):
        assert point_in_rbox((2.0, 1.0), RotatedBox(0, 0, 4, 2, 0))

    def test_rotated_matches_quad_oracle(self):
        box = RotatedBox(0, 0, 4, 2, math.pi / 4)
        expected = bool(quad_contains(rbox_to_corners(box), np.array([[1.9, 0.9]]))[0])
        assert expected is True
        assert point_in_rbox((1.9, 0.9), box) is expected

    def test_vectorized_matches_oracle(self, rng):
        for _ in range(20):
            box = random_box(rng)
            pts = rng.uniform(-150, 150, (500, 2))
            ref = quad_contains(rbox_to_corners(box), pts)
            np.testing.assert_array_equal(point_in_rbox(pts, box), ref)


class TestClip:
    def test_identical(self):
        sq = unit_square()
        out = clip_convex(sq, sq)
        assert polygon_area(out) == pytest.approx(1.0)

    def test_disjoint(self):
        sq = unit_square()
        assert len(clip_convex(sq, sq + 5)) == 0

    def test_touching_edge_is_empty(self):
        sq = unit_square()
        assert len(clip_convex(sq, sq + np.array([1.0, 0.0]))) == 0

    def test_octagon(self):
        out = clip_convex(unit_square(), unit_square(math.pi / 4))
        assert len(out) == 8
        assert polygon_area(out) == pytest.approx(2 * (SQRT2 - 1), abs=1e-12)

    def test_octagon_area_monte_carlo(self):
        # independent check of the analytic 2(sqrt2 - 1)
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.75, 0.75, (1_000_000, 2))
        both = quad_contains(unit_square(), pts) & quad_contains(unit_square(math.pi / 4), pts)
        assert both.mean() * 1.5**2 == pytest.approx(2 * (SQRT2 - 1), abs=3e-3)

    @given(boxes, boxes)
    @settings(max_examples=100)
    def test_area_bounded(self, a, b):
        pa, pb = rbox_to_corners(a), rbox_to_corners(b)
        inter = polygon_area(clip_convex(pa, pb))
        assert inter <= min(a.area, b.area) * (1 + 1e-9)


def axis_aligned_iou(a, b):
    ix = max(0.0, min(a.cx + a.w / 2, b.cx + b.w / 2) - max(a.cx - a.w / 2, b.cx - b.w / 2))
    iy = max(0.0, min(a.cy + a.h / 2, b.cy + b.h / 2) - max(a.cy - a.h / 2, b.cy - b.h / 2))
    inter = ix * iy
    return inter / (a.area + b.area - inter)


class TestSkewIoU:
    def test_identity(self):
        b = RotatedBox(3, 4, 10, 5, 0.7)
        assert skew_iou(b, b) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint(self):
        assert skew_iou(RotatedBox(0, 0, 2, 2, 0.3), RotatedBox(10, 10, 2, 2, 0.1)) == 0.0

    def test_square_vs_rotated(self):
        a = RotatedBox(0, 0, 1, 1, 0)
        b = RotatedBox(0, 0, 1, 1, math.pi / 4)
        octagon = 2 * (SQRT2 - 1)
        assert skew_iou(a, b) == pytest.approx(octagon / (2 - octagon), abs=1e-12)
        assert skew_iou(a, b) == pytest.approx(1 / SQRT2, abs=1e-9)

    @given(boxes, boxes)
    def test_symmetric(self, a, b):
        assert skew_iou(a, b) == skew_iou(b, a)

    @given(boxes, boxes)
    def test_range(self, a, b):
        assert 0.0 <= skew_iou(a, b) <= 1.0

    def test_rigid_invariance(self, rng):
        for _ in range(200):
            a = random_box(rng)
            b = perturb_box(rng, a)
            phi = float(rng.uniform(-math.pi, math.pi))
            shift = rng.uniform(-1000, 1000, 2)
            c, s = math.cos(phi), math.sin(phi)

            def move(box):
                x = c * box.cx - s * box.cy + shift[0]
                y = s * box.cx + c * box.cy + shift[1]
                return RotatedBox(x, y, box.w, box.h, box.theta + phi)

            assert skew_iou(move(a), move(b)) == pytest.approx(skew_iou(a, b), abs=1e-9)

    def test_axis_aligned_formula(self, rng):
        for _ in range(500):
            a = RotatedBox(*rng.uniform(-50, 50, 2), *rng.uniform(1, 60, 2), 0.0)
            b = RotatedBox(*rng.uniform(-50, 50, 2), *rng.uniform(1, 60, 2), 0.0)
            assert abs(skew_iou(a, b) - axis_aligned_iou(a, b)) <= 1e-12

    def test_monte_carlo_sample(self, rng):
        for _ in range(10):
            a = random_box(rng)
            b = perturb_box(rng, a)
            assert skew_iou(a, b) == pytest.approx(monte_carlo_iou(a, b, 400_000, rng), abs=5e-3)
