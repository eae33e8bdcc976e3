"""
Tests for brep_fitter.assembly module.

These tests verify:
1. Endpoint snapping onto corners, including the tie rule and closed curves
2. Face loop extraction and orientation in surface charts
3. Pruning of weakly supported faces and the removal cascade
4. End-to-end assembly of cube and capped-cylinder oracles
"""

import math

import numpy as np
import pytest

from brep_fitter.assembly import (
    AssemblyConfig,
    AssemblyError,
    assemble_brep,
    build_face_loops,
    prune_fragments,
    snap_endpoints,
)
from brep_fitter.charts import chart_for, project_loop
from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.config import PipelineConfig
from brep_fitter.fitting import PrimitiveFit
from brep_fitter.geometry import (
    BRepModel,
    Circle,
    CurveSegment,
    Face,
    FaceLoop,
    Line,
    Plane,
)
from brep_fitter.pipeline import fit_cloud
from brep_fitter.utils import ConfigError
from tests.synthetic import CUBE_CORNERS, cube_cloud

CFG = AssemblyConfig()
SQUARE = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)


def _square_edges() -> list[CurveSegment]:
    edges = []
    for k in range(4):
        a, b = SQUARE[k], SQUARE[(k + 1) % 4]
        edges.append(CurveSegment(Line(a, b - a), (0.0, 1.0), 10, (0, k + 1), (k, (k + 1) % 4)))
    return edges


def _fit(patch_id: int, inliers: int) -> PrimitiveFit:
    return PrimitiveFit(
        Plane(normal=[0, 0, 1], offset=0.0), np.arange(inliers), np.zeros(inliers), inliers, patch_id
    )


class TestAssemblyConfig:
    """Test configuration validation."""

    def test_rejects_fractional_min_face_inliers(self) -> None:
        """
        GIVEN min_face_inliers 2.5
        WHEN building the config
        THEN ConfigError is raised
        """
        with pytest.raises(ConfigError, match="min_face_inliers"):
            AssemblyConfig(min_face_inliers=2.5)

    def test_rejects_negative_snap_radius(self) -> None:
        """
        GIVEN a negative snap radius
        WHEN building the config
        THEN ConfigError is raised
        """
        with pytest.raises(ConfigError):
            AssemblyConfig(snap_radius=-0.1)


class TestSnapEndpoints:
    """Test snapping of segment endpoints onto corners."""

    def test_line_end_moves_onto_corner(self) -> None:
        """
        GIVEN a line segment ending 0.01 short of a corner
        WHEN snapping
        THEN both ends sit on the corners and the indices are recorded
        """
        seg = CurveSegment(Line([0, 0, 0], [1, 0, 0]), (0.0, 0.99), 10, (0, 1))

        (snapped,) = snap_endpoints([seg], [[0, 0, 0], [1, 0, 0]], CFG)

        np.testing.assert_allclose(snapped.end, [1, 0, 0], atol=1e-12)
        np.testing.assert_allclose(snapped.start, [0, 0, 0], atol=1e-12)
        assert snapped.endpoint_corners == (0, 1)

    def test_full_circle_without_corner_is_closed(self) -> None:
        """
        GIVEN a closed full circle and no nearby corner
        WHEN snapping
        THEN it stays closed without endpoint corners
        """
        seg = CurveSegment(Circle([0.5, 0.5, 0], [0, 0, 1], 0.2), (0.0, 2 * math.pi), 50, (0, 1), closed=True)

        (snapped,) = snap_endpoints([seg], [[0, 0, 0]], CFG)

        assert snapped.closed
        assert snapped.endpoint_corners == (None, None)

    def test_nearly_closed_arc_is_closed(self) -> None:
        """
        GIVEN an arc whose ends are 2e-4 apart and no corners
        WHEN snapping
        THEN it becomes a closed full circle
        """
        seg = CurveSegment(Circle([0.5, 0.5, 0], [0, 0, 1], 0.2), (0.0, 2 * math.pi - 1e-3), 50, (0, 1))

        (snapped,) = snap_endpoints([seg], np.empty((0, 3)), CFG)

        assert snapped.closed
        assert snapped.t_range == pytest.approx((0.0, 2 * math.pi))

    def test_equidistant_corners_pick_smaller_index(self) -> None:
        """
        GIVEN an endpoint halfway between two corners
        WHEN snapping
        THEN the lexicographically smaller corner wins
        """
        seg = CurveSegment(Line([0.5, 0.2, 0.5], [0, 1, 0]), (0.0, 0.3), 10, (0, 1))
        corners = [[0.4921875, 0.5, 0.5], [0.5078125, 0.5, 0.5]]

        (snapped,) = snap_endpoints([seg], corners, CFG)

        assert snapped.endpoint_corners == (None, 0)
        np.testing.assert_allclose(snapped.end, corners[0], atol=1e-12)

    def test_open_circle_arc_snaps_both_ends(self) -> None:
        """
        GIVEN a half circle whose ends are near two corners
        WHEN snapping
        THEN the angles move onto the corners
        """
        circle = Circle([0.5, 0.5, 0], [0, 0, 1], 0.2)
        seg = CurveSegment(circle, (0.02, math.pi - 0.02), 20, (0, 1))
        corners = [[0.3, 0.5, 0.0], [0.7, 0.5, 0.0]]

        (snapped,) = snap_endpoints([seg], corners, CFG)

        assert snapped.endpoint_corners == (1, 0)
        np.testing.assert_allclose(snapped.start, corners[1], atol=1e-12)
        np.testing.assert_allclose(snapped.end, corners[0], atol=1e-12)

    def test_line_ends_extend_to_corners_on_the_line(self) -> None:
        """
        GIVEN a line segment of 60 supports stopping 0.05 and 0.1 short of two corners on its line
        WHEN snapping
        THEN both ends reach the corners
        """
        seg = CurveSegment(Line([0.05, 0, 0], [1, 0, 0]), (0.0, 0.85), 60, (0, 1))

        (snapped,) = snap_endpoints([seg], SQUARE, CFG)

        assert snapped.endpoint_corners == (0, 1)
        np.testing.assert_allclose(snapped.start, SQUARE[0], atol=1e-12)
        np.testing.assert_allclose(snapped.end, SQUARE[1], atol=1e-12)

    def test_line_end_does_not_jump_far_past_its_support(self) -> None:
        """
        GIVEN the same line with 400 supports, so the corners lie many spacings away
        WHEN snapping
        THEN neither end moves
        """
        seg = CurveSegment(Line([0.05, 0, 0], [1, 0, 0]), (0.0, 0.85), 400, (0, 1))

        (snapped,) = snap_endpoints([seg], SQUARE, CFG)

        assert snapped.endpoint_corners == (None, None)
        np.testing.assert_allclose(snapped.end, [0.9, 0, 0], atol=1e-12)

    def test_arc_end_extends_along_the_circle(self) -> None:
        """
        GIVEN an arc of 40 supports ending 0.2 rad before a corner on its circle
        WHEN snapping
        THEN the end angle moves onto the corner
        """
        circle = Circle([0.5, 0.5, 0], [0, 0, 1], 0.2)
        seg = CurveSegment(circle, (0.0, math.pi / 2 - 0.2), 40, (0, 1))
        corners = [[0.5, 0.7, 0.0], [0.7, 0.5, 0.0]]

        (snapped,) = snap_endpoints([seg], corners, CFG)

        assert snapped.endpoint_corners == (1, 0)
        np.testing.assert_allclose(snapped.end, corners[0], atol=1e-12)


class TestBuildFaceLoops:
    """Test per-face loop extraction."""

    def test_square_face_one_loop(self) -> None:
        """
        GIVEN a square face with four snapped edges
        WHEN building loops
        THEN one closed 4-edge loop results
        """
        edges = dict(enumerate(_square_edges()))

        loops, chains, watertight = build_face_loops(Plane(normal=[0, 0, 1], offset=0.0), edges)

        assert len(loops) == 1
        assert sorted(loops[0].edges) == [0, 1, 2, 3]
        assert chains == ()
        assert watertight

    def test_plate_with_hole_has_opposite_loops(self) -> None:
        """
        GIVEN a square face with a circular hole
        WHEN building loops with interior points
        THEN two loops result with opposite chart orientations
        """
        plane = Plane(normal=[0, 0, 1], offset=0.0)
        edges = dict(enumerate(_square_edges()))
        edges[4] = CurveSegment(Circle([0.5, 0.5, 0], [0, 0, 1], 0.2), (0.0, 2 * math.pi), 40, (0, 6), closed=True)
        rng = np.random.default_rng(0)
        interior = np.column_stack([rng.uniform(0, 1, (400, 2)), np.zeros(400)])
        interior = interior[np.linalg.norm(interior[:, :2] - 0.5, axis=1) > 0.2]

        loops, _, watertight = build_face_loops(plane, edges, interior=interior)

        chart = chart_for(plane)
        areas = []
        for loop in loops:
            pts = np.concatenate(
                [
                    (edges[e].sample(32)[::-1] if r else edges[e].sample(32))[:-1]
                    for e, r in zip(loop.edges, loop.reversed, strict=True)
                ]
            )
            areas.append(project_loop(chart, pts).area)
        assert watertight
        assert len(loops) == 2
        assert areas[0] * areas[1] < 0
        assert max(abs(a) for a in areas) == pytest.approx(1.0, rel=1e-3)

    def test_missing_edge_flags_face(self) -> None:
        """
        GIVEN a square face missing one edge
        WHEN building loops
        THEN the three edges form an open chain and the face is not watertight
        """
        edges = dict(enumerate(_square_edges()[:3]))

        loops, chains, watertight = build_face_loops(Plane(normal=[0, 0, 1], offset=0.0), edges)

        assert loops == ()
        assert chains == ((0, 1, 2),)
        assert not watertight


class TestPruneFragments:
    """Test removal of weakly supported faces."""

    @staticmethod
    def _model() -> BRepModel:
        edges = _square_edges()
        edges.append(
            CurveSegment(Circle([0.5, 0.5, 0.5], [0, 0, 1], 0.1), (0.0, 2 * math.pi), 30, (9, 10), closed=True)
        )
        square = Face(Plane(normal=[0, 0, 1], offset=0.0), 0, (FaceLoop((0, 1, 2, 3), (False,) * 4),))
        disc = Face(Plane(normal=[0, 0, 1], offset=0.5), 9, (FaceLoop((4,), (False,)),))
        return BRepModel(SQUARE, tuple(edges), (square, disc))

    def test_weak_face_and_its_edges_are_removed(self) -> None:
        """
        GIVEN a face with 10 inliers and min_face_inliers 30
        WHEN pruning
        THEN the face and its exclusive edge go, the square stays intact
        """
        pruned = prune_fragments(self._model(), {0: _fit(0, 100), 9: _fit(9, 10)}, CFG)

        assert [f.patch_id for f in pruned.faces] == [0]
        assert len(pruned.edges) == 4
        assert len(pruned.corners) == 4
        assert pruned.violations() == []

    def test_cascade_removes_corners(self) -> None:
        """
        GIVEN a lone weak face
        WHEN pruning
        THEN its edges and corners disappear too
        """
        model = self._model()
        model = BRepModel(model.corners, model.edges[:4], model.faces[:1])

        pruned = prune_fragments(model, {0: _fit(0, 10)}, CFG)

        assert pruned.faces == ()
        assert pruned.edges == ()
        assert pruned.corners.shape == (0, 3)

    def test_clean_model_is_unchanged(self) -> None:
        """
        GIVEN well supported faces
        WHEN pruning
        THEN counts and corner positions are unchanged
        """
        model = self._model()

        pruned = prune_fragments(model, {0: _fit(0, 100), 9: _fit(9, 100)}, CFG)

        assert len(pruned.faces) == 2
        assert len(pruned.edges) == 5
        np.testing.assert_array_equal(pruned.corners, model.corners)


class TestAssembleBrep:
    """Test end-to-end assembly."""

    def test_no_fits_is_empty_model_error(self) -> None:
        """
        GIVEN no fitted patches
        WHEN assembling
        THEN AssemblyError "empty model" is raised
        """
        cloud = LabeledPointCloud.from_points(np.zeros((3, 3)))

        with pytest.raises(AssemblyError, match="empty model"):
            assemble_brep(cloud, {}, [], [], CFG)

    @pytest.mark.asyncio
    async def test_cube_oracle(self, cube) -> None:
        """
        GIVEN the labeled unit-cube cloud
        WHEN running the fit pipeline
        THEN 6 faces, 12 edges and 8 corners form a watertight model
        """
        result = await fit_cloud(cube)
        model = result.model

        assert (len(model.faces), len(model.edges), len(model.corners)) == (6, 12, 8)
        assert model.is_watertight()
        assert result.assembly.flagged_faces == []
        assert all(len(fs) == 2 for fs in model.edge_faces().values())
        np.testing.assert_allclose(model.corners, CUBE_CORNERS, atol=1e-2)

    @pytest.mark.asyncio
    async def test_capped_cylinder_oracle(self, capped_cylinder) -> None:
        """
        GIVEN a cylinder closed by two cap planes
        WHEN running the fit pipeline
        THEN 3 faces, 2 circular edges and no corners result, watertight
        """
        result = await fit_cloud(capped_cylinder)
        model = result.model

        assert len(model.faces) == 3
        assert [e.kind for e in model.edges] == ["circle", "circle"]
        assert len(model.corners) == 0
        assert model.is_watertight()

    @pytest.mark.asyncio
    async def test_noisy_cube_corners_are_accurate(self, cube) -> None:
        """
        GIVEN the labeled unit-cube cloud with noise sigma 0.003
        WHEN running the fit pipeline
        THEN every true vertex has a model corner within 2e-3
        """
        result = await fit_cloud(cube)

        gaps = np.linalg.norm(result.model.corners[:, None, :] - CUBE_CORNERS[None, :, :], axis=2)

        assert len(result.model.corners) == 8
        assert gaps.min(axis=0).max() < 2e-3

    @pytest.mark.asyncio
    async def test_capped_cylinder_rims_match_the_cylinder(self, capped_cylinder) -> None:
        """
        GIVEN the capped cylinder cloud at its default noise
        WHEN running the fit pipeline
        THEN both rims are closed circles of radius 0.3 around the true axis within 3e-3
        """
        result = await fit_cloud(capped_cylinder)

        rims = [e for e in result.model.edges if isinstance(e.geometry, Circle)]
        assert len(rims) == 2
        for rim in rims:
            assert isinstance(rim.geometry, Circle)
            assert rim.closed
            assert rim.geometry.radius == pytest.approx(0.3, abs=3e-3)
            np.testing.assert_allclose(rim.geometry.center[:2], [0.5, 0.5], atol=3e-3)
        heights = sorted(float(rim.geometry.center[2]) for rim in rims)
        assert heights == pytest.approx([0.2, 0.8], abs=3e-3)

    @pytest.mark.asyncio
    async def test_ablated_cube_is_flagged(self) -> None:
        """
        GIVEN a cube whose top face lost its patch label
        WHEN running the fit pipeline
        THEN 5 faces remain and the 4 side faces are reported non-watertight
        """
        cloud = cube_cloud()
        patch_id = np.where(cloud.patch_id == 5, UNLABELED, cloud.patch_id)
        ablated = LabeledPointCloud(points=cloud.points, patch_id=patch_id, edge_flag=cloud.edge_flag)

        result = await fit_cloud(ablated)

        assert len(result.model.faces) == 5
        flagged = sorted(entry["patch_id"] for entry in result.assembly.flagged_faces)
        assert flagged == [0, 1, 2, 3]
        assert not result.model.is_watertight()

    @pytest.mark.asyncio
    async def test_deterministic(self, cube) -> None:
        """
        GIVEN the same cloud and configuration
        WHEN fitting twice
        THEN the serialized models are identical
        """
        cfg = PipelineConfig()

        first = await fit_cloud(cube, cfg)
        second = await fit_cloud(cube, cfg)

        np.testing.assert_array_equal(first.model.corners, second.model.corners)
        assert [f.to_dict() for f in first.model.faces] == [f.to_dict() for f in second.model.faces]
