"""
Tests for brep_fitter.geometry module.

These tests verify:
1. Primitive distances, canonical orientation and similarity transforms
2. Curve evaluation, closest-point queries and Bezier subdivision
3. CurveSegment parameter-range invariants
4. BRepModel invariant checks and watertightness
"""

import math

import numpy as np
import pytest

from brep_fitter.cloud import Similarity
from brep_fitter.geometry import (
    TWO_PI,
    Bezier,
    BezierLoop,
    BRepModel,
    Circle,
    CurveSegment,
    Cylinder,
    Face,
    FaceLoop,
    GeometryError,
    Line,
    Plane,
    Sphere,
    bezier_point,
    primitive_from_dict,
    same_surface,
)


def lens_loop() -> BezierLoop:
    """Two pieces bulging to either side of the segment from the origin to (1, 0, 0)."""
    upper = Bezier(np.array([[0, 0, 0], [0.3, 0.4, 0], [0.7, 0.4, 0], [1, 0, 0]], dtype=float))
    lower = Bezier(np.array([[1, 0, 0], [0.7, -0.4, 0], [0.3, -0.4, 0], [0, 0, 0]], dtype=float))
    return BezierLoop((upper, lower))


def square_model() -> BRepModel:
    """Unit square in z = 0 bounded by four line edges, counter-clockwise."""
    corners = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    edges = []
    for k in range(4):
        a, b = corners[k], corners[(k + 1) % 4]
        edges.append(
            CurveSegment(
                geometry=Line(a, b - a),
                t_range=(0.0, 1.0),
                support_count=10,
                source_faces=(0, k + 1),
                endpoint_corners=(k, (k + 1) % 4),
            )
        )
    face = Face(Plane(normal=[0, 0, 1], offset=0.0), 0, (FaceLoop((0, 1, 2, 3), (False,) * 4),))
    return BRepModel(corners, tuple(edges), (face,))


class TestPrimitives:
    """Test primitive evaluation."""

    def test_plane_distance_and_projection(self) -> None:
        """
        GIVEN the plane z = 0.3
        WHEN measuring and projecting (1, 2, 1)
        THEN the distance is 0.7 and the projection lands on the plane
        """
        plane = Plane(normal=[0, 0, 1], offset=0.3)

        assert plane.distance([[1, 2, 1]])[0] == pytest.approx(0.7)
        np.testing.assert_allclose(plane.project([[1, 2, 1]]), [[1, 2, 0.3]])

    def test_plane_canonical_flips_normal_and_offset(self) -> None:
        """
        GIVEN the plane -z = -0.3
        WHEN canonicalizing
        THEN the normal becomes +z and the offset +0.3
        """
        plane = Plane(normal=[0, 0, -1], offset=-0.3).canonical()

        np.testing.assert_allclose(plane.normal, [0, 0, 1])
        assert plane.offset == pytest.approx(0.3)

    def test_cylinder_implicit_is_signed(self) -> None:
        """
        GIVEN a cylinder of radius 0.2 along z
        WHEN evaluating points inside and outside
        THEN the implicit value is negative inside and positive outside
        """
        cyl = Cylinder(axis_point=[0.5, 0.5, 0], axis_direction=[0, 0, 1], radius=0.2)

        values = cyl.implicit([[0.5, 0.5, 0.3], [0.9, 0.5, 0.3]])

        assert values[0] == pytest.approx(-0.2)
        assert values[1] == pytest.approx(0.2)

    def test_sphere_gradient_is_unit_radial(self) -> None:
        """
        GIVEN a sphere centered at the origin
        WHEN evaluating the gradient at (0, 3, 4)
        THEN it is (0, 0.6, 0.8)
        """
        sphere = Sphere(center=[0, 0, 0], radius=1.0)

        np.testing.assert_allclose(sphere.gradient([[0, 3, 4]]), [[0, 0.6, 0.8]])

    def test_rejects_non_unit_normal(self) -> None:
        """
        GIVEN a normal of length 2
        WHEN building a plane
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            Plane(normal=[0, 0, 2], offset=0.0)

    def test_rejects_non_positive_radius(self) -> None:
        """
        GIVEN radius 0
        WHEN building a sphere
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            Sphere(center=[0, 0, 0], radius=0.0)

    def test_dict_form_restores_primitive(self) -> None:
        """
        GIVEN a cylinder with statistics
        WHEN converting to a dict and back
        THEN every parameter is identical
        """
        cyl = Cylinder(axis_point=[0.1, 0.2, 0.3], axis_direction=[0, 0.6, 0.8], radius=0.25, inlier_count=40, rms_residual=0.001)

        back = primitive_from_dict(cyl.to_dict())

        assert isinstance(back, Cylinder)
        np.testing.assert_array_equal(back.parameters(), cyl.parameters())
        assert back.inlier_count == 40

    def test_transformed_plane_contains_mapped_points(self) -> None:
        """
        GIVEN a plane, points on it and a similarity
        WHEN transforming both
        THEN the mapped points lie on the mapped plane
        """
        plane = Plane(normal=np.array([1.0, 2.0, 2.0]) / 3.0, offset=0.4)
        pts = plane.project(np.random.default_rng(0).random((10, 3)))
        sim = Similarity(2.5, np.array([1.0, -2.0, 0.5]))

        moved = plane.transformed(sim)

        np.testing.assert_allclose(moved.distance(sim.apply(pts)), 0.0, atol=1e-12)

    def test_same_surface_ignores_orientation(self) -> None:
        """
        GIVEN a plane and the same plane with flipped normal
        WHEN comparing surfaces
        THEN they are the same surface
        """
        assert same_surface(Plane(normal=[1, 0, 0], offset=0.5), Plane(normal=[-1, 0, 0], offset=-0.5))
        assert not same_surface(Plane(normal=[1, 0, 0], offset=0.5), Plane(normal=[1, 0, 0], offset=0.6))


class TestCurves:
    """Test curve evaluation and queries."""

    def test_line_closest_parameter(self) -> None:
        """
        GIVEN the x axis
        WHEN projecting (2, 1, 0)
        THEN t = 2 and the distance is 1
        """
        t, d = Line([0, 0, 0], [1, 0, 0]).closest_parameter([[2, 1, 0]])

        assert t[0] == pytest.approx(2.0)
        assert d[0] == pytest.approx(1.0)

    def test_circle_angles_start_at_projected_x(self) -> None:
        """
        GIVEN a circle in the z = 0 plane
        WHEN evaluating t = 0 and t = pi/2
        THEN the points lie along +x and +y
        """
        circle = Circle([0, 0, 0], [0, 0, 1], 2.0)

        np.testing.assert_allclose(circle.evaluate([0.0, math.pi / 2]), [[2, 0, 0], [0, 2, 0]], atol=1e-12)

    def test_circle_closest_parameter_wraps_into_period(self) -> None:
        """
        GIVEN a point at angle -pi/2
        WHEN projecting onto the circle
        THEN the parameter is 3 pi / 2
        """
        t, d = Circle([0, 0, 0], [0, 0, 1], 1.0).closest_parameter([[0, -1, 0]])

        assert t[0] == pytest.approx(1.5 * math.pi)
        assert d[0] == pytest.approx(0.0, abs=1e-12)

    def test_bezier_point_endpoints(self) -> None:
        """
        GIVEN control points P0..P3
        WHEN evaluating at t = 0 and t = 1
        THEN the curve interpolates P0 and P3
        """
        P = np.array([[0, 0, 0], [1, 2, 0], [2, 2, 0], [3, 0, 0]], dtype=float)

        np.testing.assert_allclose(bezier_point(P, 0.0), P[0])
        np.testing.assert_allclose(bezier_point(P, 1.0), P[3])

    def test_bezier_point_rejects_outside_domain(self) -> None:
        """
        GIVEN t = 1.5
        WHEN evaluating a Bezier curve
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            bezier_point(np.zeros((4, 3)), 1.5)

    def test_bezier_split_reproduces_curve(self) -> None:
        """
        GIVEN a Bezier curve split at t = 0.3
        WHEN evaluating both halves
        THEN they trace the original curve
        """
        curve = Bezier(np.array([[0, 0, 0], [1, 2, 0], [2, -1, 1], [3, 0, 0]], dtype=float))
        left, right = curve.split(0.3)

        s = np.linspace(0, 1, 11)
        np.testing.assert_allclose(left.evaluate(s), curve.evaluate(0.3 * s), atol=1e-12)
        np.testing.assert_allclose(right.evaluate(s), curve.evaluate(0.3 + 0.7 * s), atol=1e-12)

    def test_bezier_restrict_reparameterizes(self) -> None:
        """
        GIVEN a Bezier curve restricted to [0.2, 0.7]
        WHEN evaluating the restriction
        THEN it matches the original over that interval
        """
        curve = Bezier(np.array([[0, 0, 0], [1, 2, 0], [2, -1, 1], [3, 0, 0]], dtype=float))

        part = curve.restrict(0.2, 0.7)

        s = np.linspace(0, 1, 9)
        np.testing.assert_allclose(part.evaluate(s), curve.evaluate(0.2 + 0.5 * s), atol=1e-12)

    def test_bezier_closest_parameter_on_curve(self) -> None:
        """
        GIVEN points sampled on a Bezier curve
        WHEN projecting them back
        THEN distances are near zero
        """
        curve = Bezier(np.array([[0, 0, 0], [1, 2, 0], [2, 2, 0], [3, 0, 0]], dtype=float))
        pts = curve.evaluate(np.linspace(0, 1, 25))

        _, d = curve.closest_parameter(pts)

        assert np.max(d) < 1e-9

    def test_bezier_loop_is_periodic(self) -> None:
        """
        GIVEN a loop of two pieces
        WHEN evaluating
        THEN piece k covers [k, k + 1] and parameters wrap with period 2
        """
        loop = lens_loop()
        t = np.array([0.0, 0.5, 1.25, 1.75])

        np.testing.assert_allclose(loop.evaluate(t + 2.0), loop.evaluate(t), atol=1e-12)
        np.testing.assert_allclose(loop.evaluate(0.5), loop.pieces[0].evaluate(0.5))
        np.testing.assert_allclose(loop.evaluate(1.25), loop.pieces[1].evaluate(0.25))
        assert loop.period == 2.0

    def test_bezier_loop_closest_parameter(self) -> None:
        """
        GIVEN points on both pieces of a loop
        WHEN projecting them back
        THEN parameters land in [0, 2) with near-zero distance
        """
        loop = lens_loop()
        t = np.array([0.1, 0.6, 1.3, 1.9])

        found, d = loop.closest_parameter(loop.evaluate(t))

        np.testing.assert_allclose(found, t, atol=1e-6)
        assert np.max(d) < 1e-9

    def test_bezier_loop_rejects_open_chain(self) -> None:
        """
        GIVEN two pieces whose second does not return to the start of the first
        WHEN building a loop
        THEN GeometryError is raised
        """
        upper, lower = lens_loop().pieces
        shifted = Bezier(lower.control_points + [0.0, 0.0, 0.01])

        with pytest.raises(GeometryError):
            BezierLoop((upper, shifted))
        with pytest.raises(GeometryError):
            BezierLoop(())


class TestCurveSegment:
    """Test segment invariants."""

    def test_rejects_empty_range(self) -> None:
        """
        GIVEN t_lo == t_hi
        WHEN building a segment
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            CurveSegment(Line([0, 0, 0], [1, 0, 0]), (1.0, 1.0), 5, (0, 1))

    def test_rejects_circle_range_longer_than_period(self) -> None:
        """
        GIVEN a circle segment spanning 3 pi
        WHEN building it
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            CurveSegment(Circle([0, 0, 0], [0, 0, 1], 1.0), (0.0, 3 * math.pi), 5, (0, 1))

    def test_rejects_bezier_range_outside_unit_interval(self) -> None:
        """
        GIVEN a Bezier segment over [0.5, 1.2]
        WHEN building it
        THEN GeometryError is raised
        """
        with pytest.raises(GeometryError):
            CurveSegment(Bezier(np.eye(4, 3)), (0.5, 1.2), 5, (0, 1))

    def test_full_circle_length(self) -> None:
        """
        GIVEN a closed circle segment of radius 0.5
        WHEN measuring its length
        THEN it is close to pi
        """
        seg = CurveSegment(Circle([0, 0, 0], [0, 0, 1], 0.5), (0.0, TWO_PI), 20, (0, 1), closed=True)

        assert seg.length(2048) == pytest.approx(math.pi, rel=1e-5)

    def test_transformed_line_scales_range(self) -> None:
        """
        GIVEN a line segment over [0, 1] and a similarity with scale 2
        WHEN transforming the segment
        THEN its end points are the mapped end points
        """
        seg = CurveSegment(Line([0, 0, 0], [1, 0, 0]), (0.0, 1.0), 5, (0, 1))
        sim = Similarity(2.0, np.array([1.0, 1.0, 1.0]))

        moved = seg.transformed(sim)

        np.testing.assert_allclose(moved.start, sim.apply(seg.start))
        np.testing.assert_allclose(moved.end, sim.apply(seg.end))

    def test_dict_form_restores_segment(self) -> None:
        """
        GIVEN a segment with corner references
        WHEN converting to a dict and back
        THEN range, corners and geometry are identical
        """
        seg = CurveSegment(Circle([0, 0, 0], [0, 0, 1], 0.5), (0.5, 2.0), 7, (1, 3), (0, 2))

        back = CurveSegment.from_dict(seg.to_dict())

        assert back.t_range == seg.t_range
        assert back.endpoint_corners == (0, 2)
        np.testing.assert_array_equal(back.sample(5), seg.sample(5))

    def test_closed_bezier_loop_segment(self) -> None:
        """
        GIVEN a loop segment over its whole period
        WHEN converting to a dict and back, and when stretching it past the period
        THEN the round trip keeps its samples and the stretched range is rejected
        """
        loop = lens_loop()
        seg = CurveSegment(loop, (0.0, loop.period), 12, (0, 1), closed=True)

        back = CurveSegment.from_dict(seg.to_dict())

        assert isinstance(back.geometry, BezierLoop)
        assert back.closed
        np.testing.assert_array_equal(back.sample(9), seg.sample(9))
        with pytest.raises(GeometryError):
            CurveSegment(loop, (0.0, 2.5), 12, (0, 1))


class TestBRepModel:
    """Test model invariants."""

    def test_square_is_valid(self) -> None:
        """
        GIVEN a square face with a closed loop
        WHEN listing violations
        THEN there are none
        """
        assert square_model().violations() == []

    def test_broken_loop_is_reported(self) -> None:
        """
        GIVEN a square loop that skips an edge
        WHEN validating
        THEN GeometryError names the break
        """
        model = square_model()
        broken = Face(model.faces[0].surface, 0, (FaceLoop((0, 2, 3), (False,) * 3),))

        with pytest.raises(GeometryError, match="loop breaks"):
            BRepModel(model.corners, model.edges, (broken,)).validate()

    def test_missing_corner_is_reported(self) -> None:
        """
        GIVEN an edge referencing corner 9 of 4
        WHEN listing violations
        THEN the missing corner is named
        """
        model = square_model()
        bad = CurveSegment(Line([0, 0, 0], [1, 0, 0]), (0.0, 1.0), 5, (0, 1), (0, 9))

        problems = BRepModel(model.corners, (bad,), ()).violations()

        assert problems == ["edge 0 references missing corner 9"]

    def test_single_face_square_is_not_watertight(self) -> None:
        """
        GIVEN a square face whose edges belong to one face only
        WHEN checking watertightness
        THEN the model is not watertight
        """
        assert not square_model().is_watertight()

    def test_edge_faces_incidence(self) -> None:
        """
        GIVEN the square model
        WHEN building edge incidence
        THEN every edge maps to face 0
        """
        assert square_model().edge_faces() == {0: (0,), 1: (0,), 2: (0,), 3: (0,)}

    def test_face_loop_signed_round_trip(self) -> None:
        """
        GIVEN a loop with a reversed edge
        WHEN converting to signed references and back
        THEN the loop is unchanged
        """
        loop = FaceLoop((0, 3, 1), (False, True, False))

        assert loop.signed() == [1, -4, 2]
        assert FaceLoop.from_signed(loop.signed()) == loop

    def test_flipped_loop_still_closes(self) -> None:
        """
        GIVEN the square loop traversed backwards
        WHEN validating
        THEN the model is still valid
        """
        model = square_model()
        face = Face(model.faces[0].surface, 0, (model.faces[0].loops[0].flipped(),))

        assert BRepModel(model.corners, model.edges, (face,)).violations() == []
