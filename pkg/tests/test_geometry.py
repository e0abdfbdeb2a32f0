import itertools
import math
import random

import numpy as np
import pytest

from evoforge.problems.geometry import (
    circle_packing_validate,
    heilbronn_validate,
    min_triangle_area,
    points_inside_triangle,
    triangle_area,
    unit_triangle,
)


def oracle_min_area(points):
    """Independent pure-Python brute force over all triples (same formula,
    different code path)."""
    best = None
    n = len(points)
    for i in range(n):
        x1, y1 = points[i]
        for j in range(i + 1, n):
            x2, y2 = points[j]
            for k in range(j + 1, n):
                x3, y3 = points[k]
                cross = (x2 - x1) * (y3 - y1) - (y2 - y1) * (x3 - x1)
                area = abs(cross) * 0.5
                if best is None or area < best:
                    best = area
    return best


def random_points_in_triangle(rng, n):
    a, b, c = unit_triangle()
    pts = []
    for _ in range(n):
        u, v = rng.random(), rng.random()
        if u + v > 1:
            u, v = 1 - u, 1 - v
        pts.append(list(a + u * (b - a) + v * (c - a)))
    return pts


class TestUnitTriangle:
    def test_area_is_one(self):
        a, b, c = unit_triangle()
        assert abs(triangle_area(a, b, c) - 1.0) <= 1e-12

    def test_equilateral(self):
        a, b, c = unit_triangle()
        side = 2.0 / (3.0 ** 0.25)
        for p, q in ((a, b), (a, c), (b, c)):
            assert abs(np.linalg.norm(p - q) - side) <= 1e-12

    def test_apex_at_origin_base_below(self):
        a, b, c = unit_triangle()
        assert a.tolist() == [0.0, 0.0]
        assert b[1] < 0 and c[1] < 0
        assert b[1] == c[1]  # flat base


class TestMinTriangleArea:
    def test_unit_triangle_vertices(self):
        a, b, c = unit_triangle()
        assert abs(min_triangle_area([a, b, c]) - 1.0) <= 1e-12

    def test_collinear_points_give_zero(self):
        pts = [[0, 0], [0.5, 0.5], [1, 1], [0.2, 0.9]]
        assert min_triangle_area(pts) == 0.0

    def test_unit_square_corners(self):
        pts = [[0, 0], [1, 0], [0, 1], [1, 1]]
        assert min_triangle_area(pts) == 0.5

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            min_triangle_area([[0, 0], [1, 1]])

    def test_matches_oracle_bit_exactly(self):
        rng = random.Random(424242)
        for _ in range(200):
            pts = random_points_in_triangle(rng, 11)
            assert min_triangle_area(pts) == oracle_min_area(pts)

    def test_permutation_invariant(self):
        # reordering changes which vertex anchors each cross product, so the
        # agreement is mathematical, not bitwise
        rng = random.Random(5)
        pts = random_points_in_triangle(rng, 8)
        shuffled = list(pts)
        rng.shuffle(shuffled)
        assert min_triangle_area(pts) == pytest.approx(
            min_triangle_area(shuffled), rel=1e-12, abs=1e-15
        )

    def test_quadratic_scaling(self):
        rng = random.Random(6)
        pts = random_points_in_triangle(rng, 7)
        scaled = [[2.0 * x, 2.0 * y] for x, y in pts]
        assert min_triangle_area(scaled) == pytest.approx(4.0 * min_triangle_area(pts), rel=1e-12)


class TestContainment:
    def test_vertices_and_centroid_inside(self):
        a, b, c = unit_triangle()
        centroid = (a + b + c) / 3.0
        assert points_inside_triangle([a, b, c, centroid], a, b, c)

    def test_point_outside(self):
        a, b, c = unit_triangle()
        assert not points_inside_triangle([[0.0, 1.0]], a, b, c)

    def test_boundary_point_counts_as_inside(self):
        a, b, c = unit_triangle()
        midpoint = (b + c) / 2.0
        assert points_inside_triangle([midpoint], a, b, c)


class TestHeilbronnValidate:
    def _valid_points(self):
        # ring seed: 11 points on a circle inside the triangle
        height = 3.0 ** 0.25
        cx, cy = 0.0, -2.0 * height / 3.0
        radius = 0.8 * height / 3.0
        return [
            [cx + radius * math.cos(2 * math.pi * k / 11), cy + radius * math.sin(2 * math.pi * k / 11)]
            for k in range(11)
        ]

    def test_valid_configuration(self):
        pts = self._valid_points()
        result = heilbronn_validate(pts)
        assert result.metrics["is_valid"] == 1
        assert result.metrics["min_area"] == oracle_min_area(pts)

    def test_wrong_cardinality(self):
        result = heilbronn_validate([[0, 0], [0.1, -0.5], [-0.1, -0.5]])
        assert result.metrics["is_valid"] == 0
        assert "cardinality" in result.reason

    def test_point_outside_triangle(self):
        pts = self._valid_points()
        pts[0] = [5.0, 5.0]
        result = heilbronn_validate(pts)
        assert result.metrics["is_valid"] == 0
        assert "containment" in result.reason

    def test_duplicate_points(self):
        pts = self._valid_points()
        pts[1] = list(pts[0])
        result = heilbronn_validate(pts)
        assert result.metrics["is_valid"] == 0
        assert result.metrics["min_area"] == 0.0

    def test_collinear_triple(self):
        a, b, c = unit_triangle()
        base = self._valid_points()[:8]
        # three points on the segment from centroid toward the apex
        centroid = ((a + b + c) / 3.0)
        line = [list(centroid + t * (a - centroid) * 0.5) for t in (0.1, 0.2, 0.3)]
        result = heilbronn_validate(base + line)
        assert result.metrics["is_valid"] == 0
        assert "collinearity" in result.reason

    @pytest.mark.parametrize("garbage", [None, "text", 42, [[0, 0, 0]] * 11, [[]], [[1]], float("nan")])
    def test_total_on_garbage(self, garbage):
        result = heilbronn_validate(garbage)
        assert result.metrics["is_valid"] == 0

    def test_nan_coordinates_invalid(self):
        pts = self._valid_points()
        pts[3][0] = float("nan")
        assert heilbronn_validate(pts).metrics["is_valid"] == 0


class TestCirclePackingValidate:
    def test_inscribed_circle(self):
        result = circle_packing_validate([[0.5, 0.5, 0.5]], n_circles=1)
        assert result.metrics["is_valid"] == 1
        assert result.metrics["sum_radii"] == 0.5

    def test_two_diagonal_circles(self):
        circles = [[0.25, 0.25, 0.25], [0.75, 0.75, 0.25]]
        # center distance sqrt(0.5) ~ 0.7071 >= 0.5
        result = circle_packing_validate(circles, n_circles=2)
        assert result.metrics["is_valid"] == 1
        assert result.metrics["sum_radii"] == pytest.approx(0.5)

    def test_overlap_detected(self):
        circles = [[0.4, 0.5, 0.3], [0.6, 0.5, 0.3]]
        result = circle_packing_validate(circles, n_circles=2)
        assert result.metrics["is_valid"] == 0
        assert "overlap" in result.reason

    def test_boundary_violation(self):
        result = circle_packing_validate([[0.1, 0.5, 0.2]], n_circles=1)
        assert result.metrics["is_valid"] == 0
        assert "boundary" in result.reason

    def test_tangency_within_tolerance(self):
        circles = [[0.25, 0.5, 0.25], [0.75, 0.5, 0.25]]  # exactly tangent
        assert circle_packing_validate(circles, n_circles=2).metrics["is_valid"] == 1

    def test_nonpositive_radius(self):
        result = circle_packing_validate([[0.5, 0.5, 0.0]], n_circles=1)
        assert result.metrics["is_valid"] == 0

    def test_cardinality(self):
        result = circle_packing_validate([[0.5, 0.5, 0.4]], n_circles=2)
        assert result.metrics["is_valid"] == 0
        assert "cardinality" in result.reason

    def test_symmetry_invariance(self):
        rng = random.Random(11)
        circles = [[0.3, 0.3, 0.12], [0.7, 0.42, 0.1], [0.52, 0.78, 0.15]]
        base = circle_packing_validate(circles, n_circles=3).metrics
        transforms = [
            lambda x, y: (1 - x, y),
            lambda x, y: (x, 1 - y),
            lambda x, y: (y, x),
            lambda x, y: (1 - y, 1 - x),
        ]
        for transform in transforms:
            moved = [[*transform(cx, cy), r] for cx, cy, r in circles]
            result = circle_packing_validate(moved, n_circles=3).metrics
            assert result["is_valid"] == base["is_valid"]
            assert result["sum_radii"] == pytest.approx(base["sum_radii"])

    @pytest.mark.parametrize("garbage", [None, [], "x", [[1, 2]], [[0.5, 0.5]]])
    def test_total_on_garbage(self, garbage):
        assert circle_packing_validate(garbage, n_circles=1).metrics["is_valid"] == 0


class TestValidatorFuzzParity:
    """Validator verdicts match an independently coded naive oracle."""

    def test_heilbronn_fuzz(self):
        rng = random.Random(99)
        a, b, c = unit_triangle()

        def naive_verdict(pts):
            if len(pts) != 11:
                return 0
            for x, y in pts:
                if not (math.isfinite(x) and math.isfinite(y)):
                    return 0
            # containment by barycentric coordinates
            det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1])
            for x, y in pts:
                l1 = ((b[1] - c[1]) * (x - c[0]) + (c[0] - b[0]) * (y - c[1])) / det
                l2 = ((c[1] - a[1]) * (x - c[0]) + (a[0] - c[0]) * (y - c[1])) / det
                l3 = 1 - l1 - l2
                slack = -1e-12 / abs(det)
                if l1 < slack or l2 < slack or l3 < slack:
                    return 0
            if len({(x, y) for x, y in pts}) != 11:
                return 0
            return 1 if oracle_min_area(pts) > 0 else 0

        for trial in range(300):
            kind = trial % 3
            if kind == 0:
                pts = random_points_in_triangle(rng, 11)
            elif kind == 1:
                pts = random_points_in_triangle(rng, rng.choice([3, 10, 12]))
            else:
                pts = random_points_in_triangle(rng, 11)
                pts[rng.randrange(11)] = [rng.uniform(-2, 2), rng.uniform(-2, 2)]
            result = heilbronn_validate(pts)
            assert result.metrics["is_valid"] == naive_verdict([tuple(p) for p in pts]), pts

    def test_circle_fuzz(self):
        rng = random.Random(123)

        def naive_verdict(circles, n):
            if len(circles) != n:
                return 0
            for cx, cy, r in circles:
                if r <= 0:
                    return 0
                if cx < r - 1e-9 or cx > 1 - r + 1e-9 or cy < r - 1e-9 or cy > 1 - r + 1e-9:
                    return 0
            for (x1, y1, r1), (x2, y2, r2) in itertools.combinations(circles, 2):
                if math.hypot(x1 - x2, y1 - y2) < r1 + r2 - 1e-9:
                    return 0
            return 1

        for _ in range(300):
            n = rng.randint(1, 6)
            circles = [
                [rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.01, 0.4)]
                for _ in range(n)
            ]
            result = circle_packing_validate(circles, n_circles=n)
            assert result.metrics["is_valid"] == naive_verdict(circles, n)
