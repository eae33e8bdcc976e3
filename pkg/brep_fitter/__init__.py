"""
B-rep Fitter - reconstruct parametric CAD models from labeled point clouds.
"""

__version__ = "0.1.0"

from brep_fitter import (
    assembly,
    charts,
    cli,
    cloud,
    config,
    exporter,
    fitting,
    geometry,
    gradients,
    intersection,
    loader,
    losses,
    metrics,
    pipeline,
    splat,
    tessellation,
    utils,
    verify,
)

__all__ = [
    "__version__",
    "assembly",
    "charts",
    "cli",
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
    "utils",
    "verify",
]
