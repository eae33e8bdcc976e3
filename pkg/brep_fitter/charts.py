"""
Surface parameter charts and trimmed face regions.

Provides functionality to:
- Map points on a plane, cylinder or sphere to 2D chart coordinates and back
- Sample face boundary loops into chart polylines
- Test chart points against the region bounded by a face's loops
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np
import shapely
from numpy.typing import ArrayLike

from brep_fitter.geometry import TWO_PI, WORKING_BOX, BRepModel, Cylinder, Face, FaceLoop, Plane, Primitive, Sphere
from brep_fitter.utils import FloatArray, as_points, orthonormal_basis, unit

_BELOW = -1e3


class SurfaceChart(Protocol):
    """2D parameterization of a primitive surface."""

    period: float | None

    def to_uv(self, points: ArrayLike) -> FloatArray: ...

    def from_uv(self, uv: ArrayLike) -> FloatArray: ...


@dataclass(frozen=True, eq=False)
class PlaneChart:
    """Orthonormal (e1, e2) coordinates around the foot of the origin."""

    plane: Plane
    period: float | None = None

    @property
    def frame(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        e1, e2 = orthonormal_basis(self.plane.normal)
        return self.plane.offset * self.plane.normal, e1, e2

    def to_uv(self, points: ArrayLike) -> FloatArray:
        origin, e1, e2 = self.frame
        d = as_points(points) - origin
        return np.column_stack([d @ e1, d @ e2])

    def from_uv(self, uv: ArrayLike) -> FloatArray:
        origin, e1, e2 = self.frame
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        return origin + np.outer(uv[:, 0], e1) + np.outer(uv[:, 1], e2)


@dataclass(frozen=True, eq=False)
class CylinderChart:
    """(theta, h) coordinates; theta is 2pi-periodic and increases around the axis."""

    cylinder: Cylinder
    period: float | None = TWO_PI

    def to_uv(self, points: ArrayLike) -> FloatArray:
        e1, e2 = orthonormal_basis(self.cylinder.axis_direction)
        w = as_points(points) - self.cylinder.axis_point
        theta = np.mod(np.arctan2(w @ e2, w @ e1), TWO_PI)
        return np.column_stack([theta, w @ self.cylinder.axis_direction])

    def from_uv(self, uv: ArrayLike) -> FloatArray:
        e1, e2 = orthonormal_basis(self.cylinder.axis_direction)
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        c = self.cylinder
        ring = np.outer(np.cos(uv[:, 0]), e1) + np.outer(np.sin(uv[:, 0]), e2)
        return c.axis_point + np.outer(uv[:, 1], c.axis_direction) + c.radius * ring


@dataclass(frozen=True, eq=False)
class SphereChart:
    """
    Stereographic chart centered on a direction of the sphere.

    The projection pole is the antipode of the center direction, so the
    neighborhood of the center maps to a bounded region around the origin.
    """

    sphere: Sphere
    center_direction: FloatArray
    period: float | None = None

    def _frame(self) -> tuple[FloatArray, FloatArray, FloatArray]:
        m = unit(self.center_direction)
        e1, e2 = orthonormal_basis(m)
        return m, e1, e2

    def to_uv(self, points: ArrayLike) -> FloatArray:
        m, e1, e2 = self._frame()
        q = (as_points(points) - self.sphere.center) / self.sphere.radius
        q = q / np.linalg.norm(q, axis=1, keepdims=True)
        denom = np.maximum(1.0 + q @ m, 1e-12)
        return np.column_stack([(q @ e1) / denom, (q @ e2) / denom])

    def from_uv(self, uv: ArrayLike) -> FloatArray:
        m, e1, e2 = self._frame()
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        r2 = np.sum(uv**2, axis=1)
        q = (2.0 * np.outer(uv[:, 0], e1) + 2.0 * np.outer(uv[:, 1], e2) + np.outer(1.0 - r2, m)) / (
            1.0 + r2
        )[:, None]
        return self.sphere.center + self.sphere.radius * q


def chart_for(surface: Primitive, center_direction: ArrayLike | None = None) -> SurfaceChart:
    """
    Build the chart of a surface.

    Args:
        surface: Supporting primitive
        center_direction: Sphere only; direction from the center the chart is centered on

    Returns:
        Chart object
    """
    if isinstance(surface, Plane):
        return PlaneChart(surface)
    if isinstance(surface, Cylinder):
        return CylinderChart(surface)
    direction = np.array([0.0, 0.0, 1.0]) if center_direction is None else np.asarray(center_direction)
    if np.linalg.norm(direction) < 1e-12:
        direction = np.array([0.0, 0.0, 1.0])
    return SphereChart(surface, unit(direction))


def chart_delta(chart: SurfaceChart, a: FloatArray, b: FloatArray) -> FloatArray:
    """Difference b - a of chart points, wrapped into (-period/2, period/2] on u."""
    d = np.asarray(b, dtype=np.float64) - np.asarray(a, dtype=np.float64)
    if chart.period is not None:
        d[..., 0] = (d[..., 0] + chart.period / 2) % chart.period - chart.period / 2
    return d


def unwrap_uv(uv: FloatArray, period: float | None) -> FloatArray:
    """Make the periodic coordinate of a chart polyline continuous."""
    if period is None or len(uv) == 0:
        return uv
    out = uv.copy()
    out[:, 0] = np.unwrap(uv[:, 0], period=period)
    return out


def signed_area(uv: FloatArray) -> float:
    """Shoelace area of a closed chart polyline (positive = counter-clockwise)."""
    x, y = uv[:, 0], uv[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def loop_points(model: BRepModel, loop: FaceLoop, samples_per_edge: int = 64) -> FloatArray:
    """
    Sample a loop into a closed 3D polyline in traversal order.

    The last point of each edge is dropped so consecutive edges do not
    repeat their shared corner.
    """
    chunks = []
    for e, rev in zip(loop.edges, loop.reversed, strict=True):
        pts = model.edges[e].sample(samples_per_edge)
        if rev:
            pts = pts[::-1]
        chunks.append(pts[:-1])
    return np.concatenate(chunks) if chunks else np.empty((0, 3))


def newell_direction(sphere: Sphere, loops: list[FloatArray]) -> FloatArray:
    """
    Direction a sphere chart should be centered on for oriented loops.

    Loops keep the face on their left, so the summed Newell area vector of
    the loops points into the face.
    """
    total = np.zeros(3)
    for pts in loops:
        q = pts - sphere.center
        total += 0.5 * np.sum(np.cross(q, np.roll(q, -1, axis=0)), axis=0)
    if np.linalg.norm(total) < 1e-12 and loops:
        total = np.concatenate(loops).mean(axis=0) - sphere.center
    return total


@dataclass(frozen=True, eq=False)
class ChartLoop:
    """A loop projected into a chart, with the periodic coordinate unwrapped."""

    uv: FloatArray
    wraps: bool

    @property
    def area(self) -> float:
        return signed_area(self.uv)

    def polygon(self) -> shapely.Polygon:
        """
        Region enclosed by the loop.

        A loop wrapping around a cylinder encloses the band below it, so that
        two wrapping loops bound the strip between them by parity.
        """
        if not self.wraps:
            return shapely.Polygon(self.uv).buffer(0)
        u = self.uv
        start, stop = u[0, 0], u[0, 0] + math.copysign(TWO_PI, u[-1, 0] - u[0, 0])
        closing = np.array([[stop, u[0, 1]], [stop, _BELOW], [start, _BELOW]])
        return shapely.Polygon(np.vstack([u, closing])).buffer(0)


def project_loop(chart: SurfaceChart, pts: FloatArray) -> ChartLoop:
    """Project a closed 3D polyline into the chart."""
    uv = unwrap_uv(chart.to_uv(pts), chart.period)
    wraps = False
    if chart.period is not None and len(uv) > 1:
        closing = chart_delta(chart, uv[-1], uv[0])
        wraps = abs(uv[-1, 0] + closing[0] - uv[0, 0]) > chart.period / 2
    return ChartLoop(uv, wraps)


@dataclass(frozen=True, eq=False)
class FaceRegion:
    """
    Trimmed region of a face in its surface chart.

    Attributes:
        chart: Surface chart the region lives in
        loops: Projected boundary loops
        trimmed: False when the face has no closed boundary and the region is a bounding box
        bounds: (umin, vmin, umax, vmax) chart bounds of the boundary samples
    """

    chart: SurfaceChart
    loops: tuple[ChartLoop, ...]
    trimmed: bool
    bounds: tuple[float, float, float, float] | None

    def contains(self, uv: ArrayLike) -> np.ndarray:
        """Boolean mask of chart points inside the region (parity over loops)."""
        uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
        if not self.trimmed:
            if self.bounds is None:
                return np.ones(len(uv), dtype=bool)
            umin, vmin, umax, vmax = self.bounds
            inside = (uv[:, 1] >= vmin) & (uv[:, 1] <= vmax)
            if self.chart.period is None or umax - umin < self.chart.period:
                inside &= self._shifted_any(uv, lambda s: (s[:, 0] >= umin) & (s[:, 0] <= umax))
            return inside
        result = np.zeros(len(uv), dtype=bool)
        for loop in self.loops:
            poly = loop.polygon()
            result ^= self._shifted_any(uv, lambda s, poly=poly: shapely.contains_xy(poly, s[:, 0], s[:, 1]))
        return result

    def _shifted_any(self, uv: FloatArray, test: object) -> np.ndarray:
        shifts = (0.0,) if self.chart.period is None else (0.0, -self.chart.period, self.chart.period, 2 * self.chart.period)
        hit = np.zeros(len(uv), dtype=bool)
        for shift in shifts:
            shifted = uv.copy()
            shifted[:, 0] += shift
            hit |= test(shifted)  # type: ignore[operator]
        return hit


def face_boundary_points(model: BRepModel, face: Face, samples_per_edge: int = 64) -> list[FloatArray]:
    """Closed loop polylines followed by open chain polylines of a face."""
    polylines = [loop_points(model, loop, samples_per_edge) for loop in face.loops]
    for chain in face.open_chains:
        polylines.extend(model.edges[e].sample(samples_per_edge) for e in chain)
    return [p for p in polylines if len(p)]


def face_region(model: BRepModel, face: Face, samples_per_edge: int = 64) -> FaceRegion:
    """
    Build the trimmed chart region of a face.

    Non-watertight faces fall back to the chart bounding box of their
    boundary samples; faces without any boundary cover their whole chart.

    Args:
        model: Model holding the face's edges
        face: Face to trim
        samples_per_edge: Polyline samples per edge

    Returns:
        FaceRegion
    """
    loops3d = [loop_points(model, loop, samples_per_edge) for loop in face.loops]
    center = None
    if isinstance(face.surface, Sphere):
        boundary = face_boundary_points(model, face, samples_per_edge)
        center = newell_direction(face.surface, loops3d) if face.watertight else None
        if center is None and boundary:
            center = np.concatenate(boundary).mean(axis=0) - face.surface.center
    chart = chart_for(face.surface, center)
    if face.watertight and loops3d:
        projected = tuple(project_loop(chart, pts) for pts in loops3d)
        all_uv = np.concatenate([p.uv for p in projected])
        bounds = (*all_uv.min(axis=0), *all_uv.max(axis=0))
        return FaceRegion(chart, projected, True, tuple(float(b) for b in bounds))  # type: ignore[arg-type]
    boundary = face_boundary_points(model, face, samples_per_edge)
    if not boundary:
        return FaceRegion(chart, (), False, None)
    uv = np.concatenate([unwrap_uv(chart.to_uv(p), chart.period) for p in boundary])
    bounds = (float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max()))
    return FaceRegion(chart, (), False, bounds)


def sampling_window(region: FaceRegion) -> tuple[float, float, float, float]:
    """
    Chart rectangle (umin, vmin, umax, vmax) covering a region.

    Regions without bounds use the chart image of the working box. A periodic
    coordinate spanning a full turn is reduced to one period.
    """
    if region.bounds is not None:
        umin, vmin, umax, vmax = region.bounds
    else:
        lo, hi = WORKING_BOX
        corners = np.array(list(itertools.product((lo, hi), repeat=3)))
        uv = region.chart.to_uv(corners)
        umin, vmin = (float(x) for x in uv.min(axis=0))
        umax, vmax = (float(x) for x in uv.max(axis=0))
    period = region.chart.period
    if period is not None:
        if region.bounds is None:
            umin = 0.0
        if region.bounds is None or umax - umin >= period:
            umax = umin + period
    return umin, vmin, umax, vmax
