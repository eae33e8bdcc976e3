"""
Tests for brep_fitter.verify module.

These tests verify:
1. The independent ray oracle and per-pixel renderer agree with the renderer
2. Each identity check passes on correct code
3. The full suite runs on the bundled reference scene
"""

from importlib import resources

import numpy as np
import pytest

from brep_fitter.loader import parse_scene
from brep_fitter.losses import Stage1LossConfig, TripletConfig
from brep_fitter.splat import Camera, Gaussian2D, GaussianScene, SplatConfig, SplatError, pixel_local_coords
from brep_fitter.verify import (
    CheckResult,
    check_bezier,
    check_cosine,
    check_kernel,
    check_loss_identities,
    check_render_oracle,
    check_sampling_rule,
    check_single_gaussian,
    check_sort_determinism,
    check_triplet_identities,
    check_zero_loss_gradients,
    quadrant_masks,
    random_scene,
    ray_splat_oracle,
    run_suite,
)


def _reference_scene() -> GaussianScene:
    text = resources.files("brep_fitter").joinpath("data/reference_scene.txt").read_text(encoding="utf-8")
    return parse_scene(text, "reference_scene.txt")


class TestOracles:
    """Test the independent oracles."""

    def test_ray_oracle_matches_local_coords(self, flat_gaussian, small_camera) -> None:
        """
        GIVEN a flat splat and every pixel
        WHEN comparing the oracle with the renderer's mapping
        THEN they agree to 1e-12
        """
        for row in range(16):
            for col in range(16):
                want = ray_splat_oracle(flat_gaussian, small_camera, (row, col))
                got = pixel_local_coords(flat_gaussian, small_camera, (row, col))
                np.testing.assert_allclose(got, want, atol=1e-12)

    def test_ray_oracle_rejects_hits_behind(self, small_camera) -> None:
        """
        GIVEN a splat above the camera
        WHEN intersecting
        THEN the oracle reports no hit
        """
        g = Gaussian2D(
            center=[0.5, 0.5, 3.0], t_u=[1, 0, 0], t_v=[0, 1, 0], scales=[0.1, 0.1],
            opacity=1.0, color=[1, 1, 1], edge=0.0,
        )

        assert ray_splat_oracle(g, small_camera, (8, 8)) is None

    def test_quadrant_masks_partition(self) -> None:
        """
        GIVEN an 8 x 6 image
        WHEN building quadrant masks
        THEN they cover every pixel exactly once
        """
        masks = quadrant_masks(8, 6)

        np.testing.assert_array_equal(np.sum(masks, axis=0), np.ones((8, 6)))

    def test_random_scene_is_valid(self) -> None:
        """
        GIVEN a seed
        WHEN generating a scene twice
        THEN it validates and repeats
        """
        a = random_scene(5, 4, feature_dim=3, size=8)
        b = random_scene(5, 4, feature_dim=3, size=8)

        a.validate()
        np.testing.assert_array_equal(a.gaussians[2].center, b.gaussians[2].center)
        assert a.camera.width == 8


class TestChecks:
    """Test individual invariant checks."""

    @pytest.mark.parametrize(
        "check",
        [
            check_kernel,
            check_bezier,
            check_single_gaussian,
            lambda: check_cosine(0),
            lambda: check_loss_identities(Stage1LossConfig(), 0),
            lambda: check_triplet_identities(TripletConfig(), 0),
            lambda: check_sampling_rule(SplatConfig()),
        ],
    )
    def test_identity_checks_pass(self, check) -> None:
        """
        GIVEN a closed-form identity check
        WHEN running it
        THEN it passes
        """
        result = check()

        assert isinstance(result, CheckResult)
        assert result.passed, result

    def test_render_oracle_on_random_scene(self) -> None:
        """
        GIVEN a random 10-Gaussian scene at 32 x 32
        WHEN comparing renderers
        THEN the largest difference is within 1e-10
        """
        result = check_render_oracle(random_scene(3, 10, size=32))

        assert result.passed, result
        assert result.measured <= 1e-10

    def test_sort_determinism(self) -> None:
        """
        GIVEN the reference scene
        WHEN rendering a shuffled copy
        THEN the maps are identical
        """
        assert check_sort_determinism(_reference_scene(), seed=2).passed

    def test_zero_loss_gradients(self) -> None:
        """
        GIVEN a small random scene as its own target
        WHEN checking gradients
        THEN they vanish
        """
        cfg = SplatConfig(feature_dim=4, image_size=8, gradient_gaussians=3)

        assert check_zero_loss_gradients(1, cfg, Stage1LossConfig()).passed

    def test_result_dict(self) -> None:
        """
        GIVEN a check result
        WHEN serializing
        THEN every field is present
        """
        data = check_kernel().to_dict()

        assert set(data) == {"name", "passed", "measured", "tolerance", "detail"}


class TestRunSuite:
    """Test the full verification run."""

    def test_invalid_scene_is_rejected(self) -> None:
        """
        GIVEN a scene with a non-orthonormal splat
        WHEN running the suite
        THEN SplatError is raised before any check
        """
        g = Gaussian2D(
            center=[0.5, 0.5, 0.0], t_u=[1, 0, 0], t_v=[1, 1, 0], scales=[0.1, 0.1],
            opacity=1.0, color=[1, 1, 1], edge=0.0,
        )
        seen = []

        with pytest.raises(SplatError):
            run_suite(GaussianScene((g,), Camera.looking_down(8)), on_check=seen.append)

        assert seen == []

    @pytest.mark.slow
    def test_reference_scene_passes(self) -> None:
        """
        GIVEN the bundled reference scene and default settings
        WHEN running every check
        THEN all of them pass
        """
        seen = []

        results = run_suite(_reference_scene(), seed=0, on_check=seen.append)

        assert results == seen
        assert [r.name for r in results if not r.passed] == []
