"""
Tests for brep_fitter.pipeline module.

These tests verify:
1. Stage counts of the cube and plate-with-hole oracles, and the cube surface accuracy
2. Models come back in the input cloud's coordinates
3. The model does not depend on the worker thread count
4. Stage failures are wrapped in StageError
"""

import itertools

import numpy as np
import pytest

from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.config import PipelineConfig
from brep_fitter.exporter import format_brep
from brep_fitter.fitting import FittingError
from brep_fitter.metrics import chamfer, sample_model_surfaces
from brep_fitter.pipeline import StageError, _pair_edge_points, fit_cloud
from tests.synthetic import cube_cloud

CUBE_CORNERS = np.array(list(itertools.product((0.0, 1.0), repeat=3)))


class TestSummary:
    """Test per-stage reporting."""

    def test_cube_summary(self, fitted_cube) -> None:
        """
        GIVEN the fitted noise-free cube
        WHEN summarizing
        THEN six planes, twelve pairs and a watertight 6/12/8 model are reported
        """
        summary = fitted_cube.summary()

        assert summary["patches"] == 6
        assert summary["fitted"] == 6
        assert summary["failed"] == 0
        assert summary["kinds"] == {"plane": 6}
        assert summary["pairs"] == 12
        assert summary["segments"] >= 12
        assert (summary["faces"], summary["edges"], summary["corners"]) == (6, 12, 8)
        assert summary["watertight"] is True
        assert summary["flagged_faces"] == []

    @pytest.mark.asyncio
    @pytest.mark.slow
    async def test_cube_surfaces_match_dense_inliers(self, cube) -> None:
        """
        GIVEN the model fitted to the noisy cube cloud
        WHEN its faces and a dense cloud of cube face points with the same noise are sampled
        THEN their symmetric Chamfer distance is below 5e-3
        """
        result = await fit_cloud(cube)
        dense = cube_cloud(face_points=60000, edge_points=0, seed=1)
        inliers = dense.points[dense.edge_flag < 0.5]

        surface = sample_model_surfaces(result.model, 60000, seed=0)

        assert len(surface) == 6 * 60000
        assert chamfer(surface, inliers) < 5e-3

    @pytest.mark.asyncio
    @pytest.mark.slow
    async def test_plate_with_hole(self, plate_with_hole) -> None:
        """
        GIVEN a slab with a cylindrical hole
        WHEN running the pipeline
        THEN 7 faces, 14 edges and 8 corners form a watertight model
        """
        result = await fit_cloud(plate_with_hole)
        summary = result.summary()

        assert summary["kinds"] == {"cylinder": 1, "plane": 6}
        assert (summary["faces"], summary["edges"], summary["corners"]) == (7, 14, 8)
        assert summary["watertight"] is True
        assert sorted(e.kind for e in result.model.edges).count("circle") == 2


class TestCoordinates:
    """Test the round trip through the unit frame."""

    @pytest.mark.asyncio
    async def test_model_in_input_coordinates(self) -> None:
        """
        GIVEN a cube scaled by 10 and shifted along x
        WHEN fitting
        THEN corners are reported in the scaled coordinates
        """
        cloud = cube_cloud(noise=0.0, scale=10.0, offset=(5.0, 0.0, 0.0))

        result = await fit_cloud(cloud)

        expected = CUBE_CORNERS * 10.0 + np.array([5.0, 0.0, 0.0])
        np.testing.assert_allclose(result.model.corners, expected, atol=0.1)
        assert np.abs(result.normalized_model.corners).max() < 1.01

    def test_preview_lies_on_the_cube(self, fitted_cube) -> None:
        """
        GIVEN the fitted cube
        WHEN building the preview mesh
        THEN every vertex lies on the cube's surface
        """
        mesh = fitted_cube.preview(density=8, samples_per_edge=8)

        to_surface = np.minimum(np.abs(mesh.vertices), np.abs(mesh.vertices - 1.0)).min(axis=1)

        assert to_surface.max() < 1e-2
        assert mesh.vertices.min() > -1e-2
        assert mesh.vertices.max() < 1.0 + 1e-2


class TestDeterminism:
    """Test independence from scheduling."""

    @pytest.mark.asyncio
    async def test_thread_count_does_not_change_model(self, cube) -> None:
        """
        GIVEN one cloud
        WHEN fitting with one thread and with four
        THEN the serialized models are identical
        """
        single = await fit_cloud(cube, PipelineConfig(threads=1))
        pooled = await fit_cloud(cube, PipelineConfig(threads=4))

        assert format_brep(single.model) == format_brep(pooled.model)


class TestStageErrors:
    """Test failure reporting."""

    @pytest.mark.asyncio
    async def test_unlabeled_cloud(self) -> None:
        """
        GIVEN a cloud without any labeled patch
        WHEN fitting
        THEN StageError names the fitting stage and keeps the cause
        """
        rng = np.random.default_rng(0)
        cloud = LabeledPointCloud.from_points(rng.uniform(size=(50, 3)))

        with pytest.raises(StageError, match=r"\[fitting\] no labeled patches") as info:
            await fit_cloud(cloud)

        assert info.value.stage == "fitting"
        assert isinstance(info.value.cause, FittingError)


class TestPairEdgePoints:
    """Test edge point selection for a patch pair."""

    def test_keeps_pair_and_unlabeled_edges(self) -> None:
        """
        GIVEN edge points of patches 0, 1, 2 and unlabeled, plus a non-edge point of patch 0
        WHEN selecting edge points for the pair (0, 1)
        THEN only edges of 0, 1 and unlabeled points remain
        """
        cloud = LabeledPointCloud(
            points=np.arange(15, dtype=float).reshape(5, 3),
            patch_id=[0, 1, 2, UNLABELED, 0],
            edge_flag=[1.0, 1.0, 1.0, 1.0, 0.0],
        )

        selected = _pair_edge_points(cloud, (0, 1), 0.5)

        np.testing.assert_array_equal(selected, cloud.points[[0, 1, 3]])
