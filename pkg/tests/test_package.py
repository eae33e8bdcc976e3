"""
Tests for brep_fitter package setup.

These tests verify:
1. Package can be imported
2. __version__ is defined
3. CLI entry point is accessible
4. Environment variables are documented
"""

import importlib
from pathlib import Path

import pytest


class TestPackageImport:
    """Test that the package can be imported correctly."""

    def test_package_can_be_imported(self) -> None:
        """
        GIVEN the brep_fitter package is installed
        WHEN importing the package
        THEN no ImportError is raised
        """
        import brep_fitter

        assert brep_fitter is not None

    def test_version_follows_semver_format(self) -> None:
        """
        GIVEN the brep_fitter package is installed
        WHEN accessing __version__
        THEN it follows semantic versioning (major.minor.patch)
        """
        from brep_fitter import __version__

        parts = __version__.split(".")
        assert len(parts) >= 2, "Version should have at least major.minor"
        assert parts[0].isdigit(), "Major version should be numeric"
        assert parts[1].isdigit(), "Minor version should be numeric"


class TestModuleStructure:
    """Test that all required modules exist."""

    @pytest.mark.parametrize(
        "module",
        [
            "assembly",
            "charts",
            "cloud",
            "config",
            "exporter",
            "fitting",
            "geometry",
            "gradients",
            "intersection",
            "loader",
            "losses",
            "metrics",
            "pipeline",
            "splat",
            "tessellation",
            "verify",
        ],
    )
    def test_module_exists(self, module: str) -> None:
        """
        GIVEN the brep_fitter package
        WHEN importing a module
        THEN no ImportError is raised
        """
        assert importlib.import_module(f"brep_fitter.{module}") is not None

    def test_reference_scene_is_bundled(self) -> None:
        """
        GIVEN the installed package
        WHEN looking up the reference scene
        THEN the data file is present
        """
        from importlib import resources

        assert resources.files("brep_fitter").joinpath("data/reference_scene.txt").is_file()


class TestCLIEntryPoint:
    """Test CLI entry point accessibility."""

    def test_cli_main_function_exists(self) -> None:
        """
        GIVEN the brep_fitter.cli module
        WHEN accessing the main function
        THEN main function is callable
        """
        from brep_fitter.cli import main

        assert callable(main)

    def test_main_module_is_runnable(self) -> None:
        """
        GIVEN the brep_fitter package
        WHEN __main__.py exists
        THEN the package can be run as a module
        """
        import brep_fitter.__main__

        assert brep_fitter.__main__ is not None


class TestEnvironmentConfig:
    """Test environment configuration handling."""

    def test_env_example_file_exists(self) -> None:
        """
        GIVEN the project structure
        WHEN looking for .env.example
        THEN the file documents every override variable
        """
        from brep_fitter.config import ENV_SEED, ENV_THREADS, ENV_VERBOSITY

        env_example = Path(__file__).parent.parent / ".env.example"
        assert env_example.exists(), ".env.example file should exist"

        content = env_example.read_text()
        for name in (ENV_SEED, ENV_THREADS, ENV_VERBOSITY):
            assert name in content
