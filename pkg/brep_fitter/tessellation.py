"""
Triangulation of B-rep faces for previews and surface checks.

Provides functionality to:
- Triangulate each face in its surface chart, trimmed against its loops
- Triangulate whole spheres on the surface itself
- Sample edges into polylines for OBJ export
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError

from brep_fitter.charts import face_region, sampling_window
from brep_fitter.geometry import WORKING_BOX, BRepModel, Face, Sphere
from brep_fitter.utils import FloatArray, IntArray, require_positive

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Triangles of every face plus edge polylines.

    Attributes:
        vertices: (V, 3) vertex positions
        triangles: (T, 3) vertex indices
        face_ids: (T,) index of the model face each triangle belongs to
        polylines: One sampled polyline per model edge
    """

    vertices: FloatArray
    triangles: IntArray
    face_ids: IntArray
    polylines: tuple[FloatArray, ...] = ()

    def areas(self) -> FloatArray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def centroids(self) -> FloatArray:
        return self.vertices[self.triangles].mean(axis=1)


def _fibonacci_sphere(sphere: Sphere, count: int) -> FloatArray:
    k = np.arange(count) + 0.5
    z = 1.0 - 2.0 * k / count
    phi = math.pi * (3.0 - math.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z * z)
    return sphere.center + sphere.radius * np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def tessellate_face(
    model: BRepModel, face: Face, density: int = 32, samples_per_edge: int = 64
) -> tuple[FloatArray, IntArray]:
    """
    Triangulate one face.

    Chart grid points inside the region and the loop samples are
    triangulated together; triangles whose centroid leaves the region are
    dropped. Faces without closed loops cover their untrimmed support
    region, clipped to the working box when it is unbounded.

    Args:
        model: Model holding the face's edges
        face: Face to triangulate
        density: Grid points per chart axis
        samples_per_edge: Loop samples per edge

    Returns:
        Tuple of ((V, 3) vertices, (T, 3) triangles)
    """
    region = face_region(model, face, samples_per_edge)
    if not region.trimmed:
        logger.warning("face %d is not closed; tessellating its untrimmed support", face.patch_id)
        if isinstance(face.surface, Sphere) and region.bounds is None:
            pts = _fibonacci_sphere(face.surface, density * density)
            return pts, ConvexHull(pts).simplices.astype(np.int64)

    umin, vmin, umax, vmax = sampling_window(region)
    gu, gv = np.meshgrid(np.linspace(umin, umax, density), np.linspace(vmin, vmax, density))
    grid = np.column_stack([gu.reshape(-1), gv.reshape(-1)])
    if region.trimmed:
        boundary = np.vstack([loop.uv for loop in region.loops])
        period = region.chart.period
        if period is not None:
            # fold the unwrapped loops into the one-period window
            boundary[:, 0] = umin + np.mod(boundary[:, 0] - umin, period)
        uv = np.vstack([grid[region.contains(grid)], boundary])
    else:
        uv = grid
    if len(uv) < 3:
        return np.empty((0, 3)), np.empty((0, 3), dtype=np.int64)
    try:
        triangles = Delaunay(uv).simplices.astype(np.int64)
    except QhullError:
        logger.warning("face %d: degenerate chart samples; no triangles", face.patch_id)
        return np.empty((0, 3)), np.empty((0, 3), dtype=np.int64)
    centroids = uv[triangles].mean(axis=1)
    keep = region.contains(centroids)
    vertices = region.chart.from_uv(uv)
    if region.bounds is None:
        lo, hi = WORKING_BOX
        inside = np.all((vertices >= lo) & (vertices <= hi), axis=1)
        keep &= inside[triangles].all(axis=1)
    return vertices, triangles[keep]


def tessellate(model: BRepModel, density: int = 32, *, samples_per_edge: int = 64) -> TriangleMesh:
    """
    Triangulate every face and sample every edge.

    Args:
        model: B-rep model
        density: Grid points per chart axis of each face
        samples_per_edge: Samples per edge loop and polyline

    Returns:
        TriangleMesh
    """
    require_positive("tessellation", density=density, samples_per_edge=samples_per_edge)
    vertices: list[FloatArray] = []
    triangles: list[IntArray] = []
    face_ids: list[IntArray] = []
    offset = 0
    for f, face in enumerate(model.faces):
        v, t = tessellate_face(model, face, density, samples_per_edge)
        vertices.append(v)
        triangles.append(t + offset)
        face_ids.append(np.full(len(t), f, dtype=np.int64))
        offset += len(v)
    polylines = tuple(edge.sample(samples_per_edge) for edge in model.edges)
    return TriangleMesh(
        vertices=np.concatenate(vertices) if vertices else np.empty((0, 3)),
        triangles=np.concatenate(triangles) if triangles else np.empty((0, 3), dtype=np.int64),
        face_ids=np.concatenate(face_ids) if face_ids else np.empty(0, dtype=np.int64),
        polylines=polylines,
    )
