"""
Intersection curves, curve segments and corners.

Provides functionality to:
- Intersect pairs of primitives in closed form or by numeric tracing
- Fit cubic Bezier chains to traced polylines
- Project edge points onto curves and extract supported segments
- Generate corner candidates and cluster them into corners
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from brep_fitter.charts import CylinderChart, PlaneChart
from brep_fitter.fitting import PrimitiveFit
from brep_fitter.geometry import (
    TWO_PI,
    WORKING_BOX,
    Bezier,
    BezierLoop,
    Circle,
    Curve,
    CurveSegment,
    Cylinder,
    Line,
    Plane,
    Primitive,
    Sphere,
    bernstein_basis,
    same_surface,
)
from brep_fitter.utils import (
    ConfigError,
    FloatArray,
    as_points,
    canonical_sign,
    lexicographic_order,
    require_positive,
    row_norms,
    unit,
)

logger = logging.getLogger(__name__)

_ERR_COINCIDENT = "coincident primitives: {a} and {b} describe the same surface"
_ERR_BEZIER_POINTS = "fit_bezier needs at least 4 points, got {got}"

_PARALLEL = 1e-9
_AXIS_SNAP_COS = math.cos(math.radians(1.0))
_AXIS_SNAP_SIN = math.sin(math.radians(1.0))
_GAP_SPACINGS = 16.0
_TANGENTIAL = 1e-6
_PLANE_TRIPLE_CONDITION = 1e6


class IntersectionError(Exception):
    """Exception raised for invalid intersection input."""


class CoincidentPrimitivesError(IntersectionError):
    """Raised when two primitives describe the same surface."""


@dataclass(frozen=True)
class TrimConfig:
    """
    Segment trimming and corner parameters.

    Attributes:
        projection_threshold: Edge points farther than this from a curve are ignored (eta)
        gap_threshold: Relative parameter gap that splits a segment (g)
        min_support: Minimum edge points per segment (m)
        corner_cluster_radius: Single-linkage merge radius for corners (r_c)
        trace_step: Marching step of numeric intersection tracing
        bezier_tolerance: Maximum deviation of a Bezier piece from its traced polyline
    """

    projection_threshold: float = 0.02
    gap_threshold: float = 0.05
    min_support: int = 5
    corner_cluster_radius: float = 0.02
    trace_step: float = 0.005
    bezier_tolerance: float = 5e-4

    def __post_init__(self) -> None:
        require_positive(
            "trim",
            projection_threshold=self.projection_threshold,
            gap_threshold=self.gap_threshold,
            min_support=self.min_support,
            corner_cluster_radius=self.corner_cluster_radius,
            trace_step=self.trace_step,
            bezier_tolerance=self.bezier_tolerance,
        )
        if int(self.min_support) != self.min_support:
            msg = f"trim.min_support must be an integer, got {self.min_support!r}"
            raise ConfigError(msg)


@dataclass(frozen=True, eq=False)
class CandidateCurve:
    """
    An intersection curve of two faces before trimming.

    Attributes:
        geometry: Line, Circle or Bezier
        source_faces: Patch ids of the two intersected faces
        is_analytic: False for traced curves approximated by Bezier pieces
    """

    geometry: Curve
    source_faces: tuple[int, int]
    is_analytic: bool


class EdgeProjection(NamedTuple):
    """Closest-point projection of one edge point onto a curve."""

    index: int
    t: float
    distance: float


# ---------------------------------------------------------------------------
# Closed-form intersections
# ---------------------------------------------------------------------------


def _plane_plane(a: Plane, b: Plane) -> list[Curve]:
    direction = np.cross(a.normal, b.normal)
    if np.linalg.norm(direction) < _PARALLEL:
        return []
    A = np.vstack([a.normal, b.normal])
    point = np.linalg.lstsq(A, np.array([a.offset, b.offset]), rcond=None)[0]
    return [Line(point, canonical_sign(unit(direction), tol=1e-12))]


def _plane_sphere(plane: Plane, sphere: Sphere) -> list[Curve]:
    dist = float(plane.implicit(sphere.center)[0])
    if abs(dist) >= sphere.radius:
        return []
    radius = math.sqrt(sphere.radius**2 - dist**2)
    return [Circle(sphere.center - dist * plane.normal, plane.normal, radius)]


def _sphere_sphere(a: Sphere, b: Sphere) -> list[Curve]:
    delta = b.center - a.center
    D = float(np.linalg.norm(delta))
    if D < 1e-12 or D >= a.radius + b.radius or D <= abs(a.radius - b.radius):
        return []
    u = delta / D
    x = (D**2 + a.radius**2 - b.radius**2) / (2.0 * D)
    radius = math.sqrt(a.radius**2 - x**2)
    return [Circle(a.center + x * u, canonical_sign(u, tol=1e-12), radius)]


def _plane_cylinder(plane: Plane, cyl: Cylinder) -> list[Curve] | None:
    """
    Closed form for perpendicular or parallel axes; None for oblique cases.

    An axis within 1 degree of the plane normal, or of the plane itself, is
    snapped to it.
    """
    cos = float(plane.normal @ cyl.axis_direction)
    if abs(cos) >= _AXIS_SNAP_COS:
        t = (plane.offset - float(plane.normal @ cyl.axis_point)) / cos
        center = cyl.axis_point + t * cyl.axis_direction
        return [Circle(center, plane.normal, cyl.radius)]
    if abs(cos) <= _AXIS_SNAP_SIN:
        direction = canonical_sign(unit(cyl.axis_direction - cos * plane.normal), tol=1e-12)
        middle = np.full(3, 0.5 * sum(WORKING_BOX))
        anchor = cyl.axis_point + float((middle - cyl.axis_point) @ cyl.axis_direction) * cyl.axis_direction
        s = float(plane.implicit(anchor)[0])
        if abs(s) > cyl.radius:
            return []
        foot = anchor - s * plane.normal
        half = math.sqrt(max(cyl.radius**2 - s**2, 0.0))
        if half <= 1e-12:
            return [Line(foot, direction)]
        side = unit(np.cross(plane.normal, direction))
        return [Line(foot - half * side, direction), Line(foot + half * side, direction)]
    return None


def _closed_form(a: Primitive, b: Primitive) -> list[Curve] | None:
    if isinstance(a, Plane) and isinstance(b, Plane):
        return _plane_plane(a, b)
    if isinstance(a, Sphere) and isinstance(b, Sphere):
        return _sphere_sphere(a, b)
    if isinstance(a, Plane) and isinstance(b, Sphere):
        return _plane_sphere(a, b)
    if isinstance(a, Sphere) and isinstance(b, Plane):
        return _plane_sphere(b, a)
    if isinstance(a, Plane) and isinstance(b, Cylinder):
        return _plane_cylinder(a, b)
    if isinstance(a, Cylinder) and isinstance(b, Plane):
        return _plane_cylinder(b, a)
    return None


# ---------------------------------------------------------------------------
# Numeric tracing
# ---------------------------------------------------------------------------


def _surface_samples(surface: Primitive, lo: float, hi: float, resolution: int = 200) -> FloatArray:
    """Grid samples of a surface covering the working box."""
    corners = np.array(list(itertools.product((lo, hi), repeat=3)), dtype=np.float64)
    if isinstance(surface, Plane):
        chart = PlaneChart(surface)
        uv = chart.to_uv(corners)
        u = np.linspace(uv[:, 0].min(), uv[:, 0].max(), resolution)
        v = np.linspace(uv[:, 1].min(), uv[:, 1].max(), resolution)
        grid = np.stack(np.meshgrid(u, v, indexing="ij"), axis=-1).reshape(-1, 2)
        return chart.from_uv(grid)
    if isinstance(surface, Cylinder):
        chart_c = CylinderChart(surface)
        h = (corners - surface.axis_point) @ surface.axis_direction
        theta = np.linspace(0.0, TWO_PI, resolution, endpoint=False)
        heights = np.linspace(h.min(), h.max(), resolution)
        grid = np.stack(np.meshgrid(theta, heights, indexing="ij"), axis=-1).reshape(-1, 2)
        return chart_c.from_uv(grid)
    theta = np.linspace(0.0, TWO_PI, resolution, endpoint=False)
    phi = np.linspace(0.0, math.pi, resolution // 2)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(P) * np.cos(T), np.sin(P) * np.sin(T), np.cos(P)], axis=-1).reshape(-1, 3)
    return surface.center + surface.radius * dirs


def default_seeds(a: Primitive, b: Primitive, eps: float) -> FloatArray:
    """Samples of a inside the working box lying within 2 eps of b."""
    lo, hi = WORKING_BOX
    samples = _surface_samples(a, lo, hi)
    inside = np.all((samples >= lo) & (samples <= hi), axis=1)
    samples = samples[inside]
    return samples[b.distance(samples) < 2.0 * eps]


def _project_to_curve(a: Primitive, b: Primitive, x: FloatArray, iterations: int = 50) -> FloatArray | None:
    """Newton projection onto f_a = f_b = 0 with minimum-norm steps."""
    for _ in range(iterations):
        f = np.array([a.implicit(x)[0], b.implicit(x)[0]])
        if np.max(np.abs(f)) < 1e-12:
            return x
        J = np.vstack([a.gradient(x)[0], b.gradient(x)[0]])
        gram = J @ J.T
        if abs(np.linalg.det(gram)) < 1e-14:
            return None
        x = x - J.T @ np.linalg.solve(gram, f)
    f = np.array([a.implicit(x)[0], b.implicit(x)[0]])
    return x if np.max(np.abs(f)) < 1e-10 else None


def _tangent(a: Primitive, b: Primitive, x: FloatArray) -> FloatArray | None:
    t = np.cross(a.gradient(x)[0], b.gradient(x)[0])
    norm = float(np.linalg.norm(t))
    return None if norm < _TANGENTIAL else t / norm


def _march(
    a: Primitive, b: Primitive, start: FloatArray, direction: float, step: float, max_steps: int
) -> tuple[list[FloatArray], bool]:
    """March from start along +/- the tangent; returns (points after start, closed)."""
    lo, hi = WORKING_BOX
    x = start
    first = _tangent(a, b, start)
    if first is None:
        logger.warning("tangential intersection at seed %s; branch truncated", np.round(start, 6))
        return [], False
    prev = direction * first
    points: list[FloatArray] = []
    for k in range(max_steps):
        nxt = _project_to_curve(a, b, x + step * prev)
        if nxt is None:
            break
        t = _tangent(a, b, nxt)
        if t is None:
            logger.warning("tangential intersection near %s; branch truncated", np.round(nxt, 6))
            points.append(nxt)
            break
        if t @ prev < 0:
            t = -t
        if k >= 3 and np.linalg.norm(nxt - start) < 0.75 * step:
            return points, True
        points.append(nxt)
        if np.any(nxt < lo) or np.any(nxt > hi):
            break
        x, prev = nxt, t
    return points, False


def trace_intersection_numeric(
    a: Primitive,
    b: Primitive,
    step: float = 0.005,
    *,
    seeds: ArrayLike | None = None,
    eps: float = 0.01,
    max_steps: int = 20000,
) -> list[FloatArray]:
    """
    Trace the intersection curve of two implicit surfaces.

    Seeds within 2 eps of both surfaces are Newton-projected onto the curve;
    each branch is marched along grad f_a x grad f_b with re-projection
    until it closes or leaves the working box. Closed polylines repeat their
    first point at the end.

    Args:
        a: First primitive
        b: Second primitive
        step: Marching step length
        seeds: Candidate seed points (default: surface samples of a near b)
        eps: Seed acceptance distance (2 eps to each surface)
        max_steps: Step limit per direction

    Returns:
        Deduplicated list of (M, 3) polylines; empty when no seed converges
    """
    if seeds is None:
        seed_pts = default_seeds(a, b, eps)
    else:
        seed_pts = as_points(seeds) if len(np.asarray(seeds)) else np.empty((0, 3))
        near = (a.distance(seed_pts) < 2.0 * eps) & (b.distance(seed_pts) < 2.0 * eps)
        seed_pts = seed_pts[near]

    branches: list[FloatArray] = []
    tree: cKDTree | None = None
    for seed in seed_pts:
        if tree is not None:
            dist, _ = tree.query(seed)
            if dist < 4.0 * step + 2.0 * eps:
                continue
        start = _project_to_curve(a, b, seed)
        if start is None:
            continue
        if tree is not None and tree.query(start)[0] < 2.0 * step:
            continue
        forward, closed = _march(a, b, start, 1.0, step, max_steps)
        if closed:
            polyline = np.vstack([start, *forward, start]) if forward else np.vstack([start, start])
        else:
            backward, _ = _march(a, b, start, -1.0, step, max_steps)
            polyline = np.vstack([*backward[::-1], start, *forward])
        if len(polyline) < 4:
            continue
        branches.append(polyline)
        tree = cKDTree(np.concatenate(branches))
    return branches


# ---------------------------------------------------------------------------
# Bezier fitting
# ---------------------------------------------------------------------------


def _chord_parameters(points: FloatArray) -> FloatArray:
    lengths = np.concatenate([[0.0], np.cumsum(row_norms(np.diff(points, axis=0)))])
    total = lengths[-1]
    if total <= 0:
        return np.linspace(0.0, 1.0, len(points))
    return lengths / total


def fit_cubic_fixed_ends(
    points: FloatArray, p0: FloatArray, p3: FloatArray, t: FloatArray
) -> FloatArray:
    """Least-squares interior control points for fixed P0, P3 and parameters t."""
    B = bernstein_basis(t)
    target = points - np.outer(B[:, 0], p0) - np.outer(B[:, 3], p3)
    interior = np.linalg.lstsq(B[:, 1:3], target, rcond=None)[0]
    return np.vstack([p0, interior, p3])


def _reparameterize(P: FloatArray, points: FloatArray, t: FloatArray) -> FloatArray:
    """One Newton step of every interior parameter towards its closest point."""
    curve = Bezier(P)
    diff = curve.evaluate(t) - points
    d1 = curve.derivative(t)
    d2 = curve.second_derivative(t)
    num = np.einsum("ij,ij->i", diff, d1)
    den = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", diff, d2)
    step = np.where(np.abs(den) > 1e-15, num / np.where(np.abs(den) > 1e-15, den, 1.0), 0.0)
    out = np.clip(t - step, 0.0, 1.0)
    out[0], out[-1] = 0.0, 1.0
    return np.maximum.accumulate(out)


def _fit_single(points: FloatArray, iterations: int = 50) -> tuple[FloatArray, FloatArray]:
    t = _chord_parameters(points)
    P = fit_cubic_fixed_ends(points, points[0], points[-1], t)
    for _ in range(iterations):
        t_new = _reparameterize(P, points, t)
        P = fit_cubic_fixed_ends(points, points[0], points[-1], t_new)
        if np.max(np.abs(t_new - t)) < 1e-14:
            t = t_new
            break
        t = t_new
    deviation = row_norms(Bezier(P).evaluate(t) - points)
    return P, deviation


def _densify(points: FloatArray) -> FloatArray:
    """Polyline with the midpoint of every chord inserted."""
    out = np.empty((2 * len(points) - 1, 3))
    out[::2] = points
    out[1::2] = 0.5 * (points[:-1] + points[1:])
    return out


def fit_bezier(
    polyline: ArrayLike, tolerance: float = 0.04, *, max_depth: int = 16
) -> list[Bezier]:
    """
    Fit a chain of cubic Bezier curves to an ordered polyline.

    Each piece interpolates its first and last point; P1 and P2 are solved by
    least squares under chord-length parameters refined by Newton
    reparameterization. A piece deviating more than tolerance is split at its
    farthest point; runs too short to split get chord midpoints inserted
    first. A piece still out of tolerance at the recursion limit is kept and
    logged.

    Args:
        polyline: (M, 3) ordered points, M >= 4
        tolerance: Maximum accepted deviation (twice the projection threshold by default)
        max_depth: Recursion limit

    Returns:
        Bezier pieces in polyline order, each carrying its source samples

    Raises:
        IntersectionError: If fewer than 4 points are given
    """
    pts = as_points(polyline)
    if len(pts) < 4:
        msg = _ERR_BEZIER_POINTS.format(got=len(pts))
        raise IntersectionError(msg)
    P, deviation = _fit_single(pts)
    worst = int(np.argmax(deviation))
    if deviation[worst] <= tolerance:
        return [Bezier(P, pts)]
    if max_depth <= 0:
        logger.warning(
            "bezier piece deviates %.3g from %d samples (tolerance %.3g)",
            deviation[worst],
            len(pts),
            tolerance,
        )
        return [Bezier(P, pts)]
    if len(pts) < 7:
        return fit_bezier(_densify(pts), tolerance, max_depth=max_depth - 1)
    split = min(max(worst, 3), len(pts) - 4)
    left = fit_bezier(pts[: split + 1], tolerance, max_depth=max_depth - 1)
    right = fit_bezier(pts[split:], tolerance, max_depth=max_depth - 1)
    return left + right


# ---------------------------------------------------------------------------
# Pair intersection
# ---------------------------------------------------------------------------


def intersect_primitives(
    a: Primitive,
    b: Primitive,
    *,
    source_faces: tuple[int, int] = (-1, -1),
    seeds: ArrayLike | None = None,
    eps: float = 0.01,
    cfg: TrimConfig | None = None,
) -> list[CandidateCurve]:
    """
    Intersect two primitives.

    Plane/plane, plane/sphere, sphere/sphere and perpendicular or parallel
    plane/cylinder pairs are solved in closed form; every other pair is traced
    numerically and approximated by Bezier pieces. A closed traced branch
    becomes one BezierLoop, an open one a curve per piece.

    Args:
        a: First primitive
        b: Second primitive
        source_faces: Patch ids recorded on the curves
        seeds: Seed points for traced pairs (edge points near both surfaces)
        eps: RANSAC inlier threshold used for seed acceptance
        cfg: Trim configuration (trace step, Bezier tolerance)

    Returns:
        Candidate curves, empty when the surfaces do not meet

    Raises:
        CoincidentPrimitivesError: If both primitives describe the same surface
    """
    cfg = cfg or TrimConfig()
    if same_surface(a, b):
        msg = _ERR_COINCIDENT.format(a=a.kind.value, b=b.kind.value)
        raise CoincidentPrimitivesError(msg)
    closed = _closed_form(a, b)
    if closed is not None:
        return [CandidateCurve(curve, source_faces, True) for curve in closed]
    polylines = trace_intersection_numeric(a, b, cfg.trace_step, seeds=seeds, eps=eps)
    curves: list[CandidateCurve] = []
    for polyline in polylines:
        pieces = fit_bezier(polyline, cfg.bezier_tolerance)
        if np.array_equal(polyline[0], polyline[-1]):
            curves.append(CandidateCurve(BezierLoop(tuple(pieces)), source_faces, False))
        else:
            curves.extend(CandidateCurve(piece, source_faces, False) for piece in pieces)
    logger.debug("traced %d branch(es) into %d curve(s)", len(polylines), len(curves))
    return curves


def candidate_pairs(
    fits: dict[int, PrimitiveFit], points: FloatArray, eps: float
) -> list[tuple[int, int]]:
    """
    Patch pairs whose inlier sets come within 3 eps of each other.

    Args:
        fits: Fits by patch id (inlier indices into points)
        points: Cloud points
        eps: RANSAC inlier threshold

    Returns:
        Sorted (patch_a, patch_b) pairs with patch_a < patch_b
    """
    reach = 3.0 * eps
    ids = sorted(fits)
    clouds = {pid: points[fits[pid].inlier_indices] for pid in ids}
    boxes = {
        pid: (pts.min(axis=0) - reach, pts.max(axis=0) + reach)
        for pid, pts in clouds.items()
        if len(pts)
    }
    trees: dict[int, cKDTree] = {}
    pairs: list[tuple[int, int]] = []
    for pa, pb in itertools.combinations(ids, 2):
        if pa not in boxes or pb not in boxes:
            continue
        (alo, ahi), (blo, bhi) = boxes[pa], boxes[pb]
        if np.any(ahi < blo) or np.any(bhi < alo):
            continue
        if pb not in trees:
            trees[pb] = cKDTree(clouds[pb])
        dist, _ = trees[pb].query(clouds[pa], distance_upper_bound=reach)
        if np.any(np.isfinite(dist)):
            pairs.append((pa, pb))
    return pairs


# ---------------------------------------------------------------------------
# Trimming
# ---------------------------------------------------------------------------


def project_edge_points(
    curve: CandidateCurve | Curve, edge_points: ArrayLike, cfg: TrimConfig
) -> list[EdgeProjection]:
    """
    Project edge points onto a curve.

    Args:
        curve: Candidate curve or bare curve geometry
        edge_points: (M, 3) edge-labeled points
        cfg: Trim configuration (projection threshold)

    Returns:
        Projections within the threshold, sorted by parameter then index
    """
    geometry = curve.geometry if isinstance(curve, CandidateCurve) else curve
    pts = as_points(edge_points) if len(np.asarray(edge_points)) else np.empty((0, 3))
    eta = cfg.projection_threshold
    candidates = np.arange(len(pts))
    if isinstance(geometry, Bezier | BezierLoop):
        control = (
            geometry.control_points
            if isinstance(geometry, Bezier)
            else np.vstack([piece.control_points for piece in geometry.pieces])
        )
        lo = control.min(axis=0) - eta
        hi = control.max(axis=0) + eta
        candidates = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
    if len(candidates) == 0:
        return []
    t, dist = geometry.closest_parameter(pts[candidates])
    keep = dist <= eta
    out = [
        EdgeProjection(int(i), float(ti), float(di))
        for i, ti, di in zip(candidates[keep], t[keep], dist[keep], strict=True)
    ]
    out.sort(key=lambda p: (p.t, p.index))
    return out


def _clusters(ts: FloatArray, threshold: float) -> list[FloatArray]:
    if len(ts) == 0:
        return []
    breaks = np.flatnonzero(np.diff(ts) > threshold) + 1
    return np.split(ts, breaks)


def _periodic_gaps(ts: FloatArray, period: float | None) -> FloatArray:
    if period is None:
        return np.diff(ts)
    return np.diff(np.concatenate([ts, [ts[0] + period]]))


def split_threshold(ts: FloatArray, base: float, period: float | None = None) -> float:
    """
    Parameter gap above which sorted support splits.

    A gap must exceed base and 16 times the median spacing of the support,
    so random sampling of a fully supported curve does not split it.
    """
    gaps = _periodic_gaps(ts, period)
    typical = float(np.median(gaps)) if len(gaps) else 0.0
    return max(base, _GAP_SPACINGS * typical)


def _circular_clusters(ts: FloatArray, threshold: float, period: float) -> list[FloatArray] | None:
    """Clusters of sorted periodic parameters; None when the support has no gap."""
    big = np.flatnonzero(_periodic_gaps(ts, period) > threshold)
    if len(big) == 0:
        return None
    start = int(big[0]) + 1
    rotated = np.concatenate([ts[start:], ts[:start] + period])
    return _clusters(rotated, threshold)


def extract_segments(
    projections: list[EdgeProjection],
    curve: CandidateCurve,
    cfg: TrimConfig,
) -> list[CurveSegment]:
    """
    Split the projected support of a curve into segments.

    Parameters are split where a consecutive gap exceeds both g times the
    parameter span (the period for circles and Bezier loops, the supported
    extent for lines, 1 for Bezier curves) and 16 median spacings; clusters
    with at least m points become segments padded by half their mean gap.

    Args:
        projections: Output of project_edge_points
        curve: The projected curve
        cfg: Trim configuration

    Returns:
        Disjoint segments in parameter order
    """
    if len(projections) < cfg.min_support:
        return []
    ts = np.sort(np.array([p.t for p in projections], dtype=np.float64))
    geometry = curve.geometry
    segments: list[CurveSegment] = []

    def make(lo: float, hi: float, count: int, closed: bool = False) -> None:
        segments.append(
            CurveSegment(
                geometry=geometry,
                t_range=(lo, hi),
                support_count=count,
                source_faces=curve.source_faces,
                closed=closed,
            )
        )

    period: float | None = None
    if isinstance(geometry, Circle | BezierLoop):
        period = TWO_PI if isinstance(geometry, Circle) else geometry.period
        clusters = _circular_clusters(
            ts, split_threshold(ts, cfg.gap_threshold * period, period), period
        )
        if clusters is None:
            make(0.0, period, len(ts), closed=True)
            return segments
    elif isinstance(geometry, Line):
        span = float(ts[-1] - ts[0])
        clusters = _clusters(ts, split_threshold(ts, cfg.gap_threshold * span)) if span > 0 else [ts]
    else:
        clusters = _clusters(ts, split_threshold(ts, cfg.gap_threshold))

    for cluster in clusters:
        if len(cluster) < cfg.min_support:
            continue
        pad = 0.5 * float(np.mean(np.diff(cluster))) if len(cluster) > 1 else 0.0
        lo, hi = float(cluster[0]) - pad, float(cluster[-1]) + pad
        if isinstance(geometry, Bezier):
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if period is not None and hi - lo >= period:
            make(0.0, period, len(cluster), closed=True)
            continue
        if hi <= lo:
            continue
        make(lo, hi, len(cluster))
    return segments


# ---------------------------------------------------------------------------
# Corners
# ---------------------------------------------------------------------------


def _in_box(point: FloatArray) -> bool:
    lo, hi = WORKING_BOX
    return bool(np.all(point >= lo) and np.all(point <= hi))


def _line_pair_midpoint(a: CurveSegment, b: CurveSegment, eta: float) -> FloatArray | None:
    la, lb = a.geometry, b.geometry
    assert isinstance(la, Line) and isinstance(lb, Line)
    cross = np.cross(la.direction, lb.direction)
    if np.linalg.norm(cross) < _PARALLEL:
        return None
    w = la.point - lb.point
    c = float(la.direction @ lb.direction)
    d, e = float(la.direction @ w), float(lb.direction @ w)
    denom = 1.0 - c * c
    s = (c * e - d) / denom
    t = (e - c * d) / denom
    pa, pb = la.evaluate(s)[0], lb.evaluate(t)[0]
    if np.linalg.norm(pa - pb) >= eta:
        return None
    inside_a = a.t_range[0] - eta <= s <= a.t_range[1] + eta
    inside_b = b.t_range[0] - eta <= t <= b.t_range[1] + eta
    return 0.5 * (pa + pb) if inside_a and inside_b else None


def corner_candidates(
    fits: dict[int, PrimitiveFit] | list[PrimitiveFit],
    segments: list[CurveSegment],
    cfg: TrimConfig,
) -> FloatArray:
    """
    Corner candidates from plane triples, line pairs and curved segment ends.

    Args:
        fits: Primitive fits (dict by patch id or list)
        segments: Extracted curve segments
        cfg: Trim configuration

    Returns:
        (M, 3) candidate positions
    """
    fit_list = [fits[k] for k in sorted(fits)] if isinstance(fits, dict) else list(fits)
    planes = [f.primitive for f in fit_list if isinstance(f.primitive, Plane)]
    out: list[FloatArray] = []
    for p, q, r in itertools.combinations(planes, 3):
        A = np.vstack([p.normal, q.normal, r.normal])
        if np.linalg.cond(A) >= _PLANE_TRIPLE_CONDITION:
            continue
        x = np.linalg.solve(A, np.array([p.offset, q.offset, r.offset]))
        if _in_box(x):
            out.append(x)

    lines = [s for s in segments if isinstance(s.geometry, Line)]
    for a, b in itertools.combinations(lines, 2):
        mid = _line_pair_midpoint(a, b, cfg.projection_threshold)
        if mid is not None:
            out.append(mid)

    for seg in segments:
        if isinstance(seg.geometry, Circle | Bezier | BezierLoop) and not seg.closed:
            out.extend([seg.start, seg.end])
    return np.array(out, dtype=np.float64).reshape(-1, 3)


def cluster_corners(candidates: ArrayLike, cfg: TrimConfig) -> FloatArray:
    """
    Single-linkage clustering of corner candidates.

    Candidates at distance <= r_c are linked; each corner is the centroid of
    its cluster. The result is sorted lexicographically and independent of
    the input order.

    Args:
        candidates: (M, 3) candidate positions
        cfg: Trim configuration (corner_cluster_radius)

    Returns:
        (K, 3) corners
    """
    pts = np.asarray(candidates, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return np.empty((0, 3))
    pts = pts[lexicographic_order(pts)]
    pairs = cKDTree(pts).query_pairs(cfg.corner_cluster_radius * (1 + 1e-9), output_type="ndarray")
    n = len(pts)
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    count, labels = connected_components(graph, directed=False)
    corners = np.array([pts[labels == k].mean(axis=0) for k in range(count)])
    return corners[lexicographic_order(corners)]
