"""
Shared fixtures: synthetic clouds with known answers and small splat scenes.
"""

from __future__ import annotations

import asyncio

import numpy as np
import pytest

from brep_fitter.cloud import LabeledPointCloud
from brep_fitter.pipeline import PipelineResult, fit_cloud
from brep_fitter.splat import Camera, Gaussian2D, GaussianScene
from tests.synthetic import capped_cylinder_cloud, cube_cloud, plate_with_hole_cloud


@pytest.fixture(autouse=True)
def _isolated_environment(monkeypatch: pytest.MonkeyPatch, tmp_path_factory: pytest.TempPathFactory) -> None:
    """Keep BREP_FITTER_* variables and stray .env files out of every test."""
    for name in ("BREP_FITTER_SEED", "BREP_FITTER_THREADS", "BREP_FITTER_VERBOSITY"):
        monkeypatch.delenv(name, raising=False)
    monkeypatch.chdir(tmp_path_factory.mktemp("cwd"))


@pytest.fixture(scope="session")
def cube() -> LabeledPointCloud:
    return cube_cloud()


@pytest.fixture(scope="session")
def capped_cylinder() -> LabeledPointCloud:
    return capped_cylinder_cloud()


@pytest.fixture(scope="session")
def plate_with_hole() -> LabeledPointCloud:
    return plate_with_hole_cloud()


@pytest.fixture
def flat_gaussian() -> Gaussian2D:
    """Isotropic splat lying in the plane z = 0.2 at the unit square's center."""
    return Gaussian2D(
        center=[0.5, 0.5, 0.2],
        t_u=[1.0, 0.0, 0.0],
        t_v=[0.0, 1.0, 0.0],
        scales=[0.2, 0.2],
        opacity=0.8,
        color=[0.9, 0.3, 0.1],
        edge=0.25,
        feature=np.array([1.0, 0.0, 0.0, 0.0]),
    )


@pytest.fixture
def small_camera() -> Camera:
    return Camera.looking_down(16)


@pytest.fixture
def small_scene(flat_gaussian: Gaussian2D, small_camera: Camera) -> GaussianScene:
    return GaussianScene((flat_gaussian,), small_camera)


@pytest.fixture(scope="session")
def fitted_cube() -> PipelineResult:
    """Pipeline result of the noise-free unit cube."""
    return asyncio.run(fit_cloud(cube_cloud(noise=0.0)))
