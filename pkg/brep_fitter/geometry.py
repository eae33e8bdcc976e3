"""
Geometric types of the B-rep pipeline.

Provides functionality to:
- Represent analytic surfaces (plane, cylinder, sphere) with implicit forms
- Represent curves (line, circle, cubic Bezier, closed Bezier chain) and trimmed curve segments
- Assemble corners, edges and trimmed faces into a BRepModel
- Evaluate cubic Bezier curves in the Bernstein basis
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, ClassVar, TypeAlias

import numpy as np
from numpy.typing import ArrayLike

from brep_fitter.cloud import Similarity
from brep_fitter.utils import FloatArray, IntArray, as_points, canonical_sign, orthonormal_basis, row_norms

TWO_PI = 2.0 * math.pi

WORKING_BOX = (-0.1, 1.1)
"""Unit-box margin inside which curves are traced, corners accepted and unbounded faces clipped."""

_ERR_BEZIER_DOMAIN = "bezier parameter t={t!r} outside [0, 1]"
_ERR_UNIT = "{name} must be a unit vector (|v| = {norm:.12g})"
_ERR_RADIUS = "radius must be > 0, got {radius!r}"
_ERR_T_RANGE = "invalid t_range {t_range!r} for {kind} segment"
_ERR_LOOP_EMPTY = "bezier loop needs at least one piece"
_ERR_LOOP_JOINT = "bezier loop piece {k} ends {gap:.3g} away from the next piece"

_LOOP_JOINT_TOLERANCE = 1e-9


class GeometryError(ValueError):
    """Exception raised for invalid geometric entities or topology."""


class PrimitiveKind(StrEnum):
    """Surface types in order of increasing complexity."""

    PLANE = "plane"
    CYLINDER = "cylinder"
    SPHERE = "sphere"


PRIMITIVE_ORDER = (PrimitiveKind.PLANE, PrimitiveKind.CYLINDER, PrimitiveKind.SPHERE)


def _vec(value: ArrayLike) -> FloatArray:
    arr = np.array(value, dtype=np.float64).reshape(3)
    arr.setflags(write=False)
    return arr


def _check_unit(name: str, v: FloatArray, tol: float = 1e-9) -> None:
    norm = float(np.linalg.norm(v))
    if abs(norm - 1.0) > tol:
        msg = _ERR_UNIT.format(name=name, norm=norm)
        raise GeometryError(msg)


def _check_radius(radius: float) -> None:
    if not (radius > 0 and math.isfinite(radius)):
        msg = _ERR_RADIUS.format(radius=radius)
        raise GeometryError(msg)


# ---------------------------------------------------------------------------
# Surfaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False, kw_only=True)
class Plane:
    """
    Plane n . x = d.

    Attributes:
        normal: Unit normal n
        offset: Signed offset d
        inlier_count: Number of supporting points
        rms_residual: RMS distance of the supporting points
    """

    kind: ClassVar[PrimitiveKind] = PrimitiveKind.PLANE

    normal: FloatArray
    offset: float
    inlier_count: int = 0
    rms_residual: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "normal", _vec(self.normal))
        object.__setattr__(self, "offset", float(self.offset))
        _check_unit("plane normal", self.normal)

    def implicit(self, points: ArrayLike) -> FloatArray:
        """Signed distance n . x - d."""
        return as_points(points) @ self.normal - self.offset

    def distance(self, points: ArrayLike) -> FloatArray:
        """Unsigned distance to the plane."""
        return np.abs(self.implicit(points))

    def gradient(self, points: ArrayLike) -> FloatArray:
        """Unit gradient of the implicit function."""
        return np.broadcast_to(self.normal, as_points(points).shape).copy()

    def project(self, points: ArrayLike) -> FloatArray:
        """Closest points on the plane."""
        pts = as_points(points)
        return pts - np.outer(self.implicit(pts), self.normal)

    def canonical(self) -> Plane:
        """Copy with the normal's first nonzero component positive."""
        n = canonical_sign(self.normal, tol=1e-12)
        sign = 1.0 if np.allclose(n, self.normal) else -1.0
        return replace(self, normal=n, offset=sign * self.offset)

    def transformed(self, sim: Similarity) -> Plane:
        """Plane mapped through a similarity."""
        return replace(
            self,
            offset=sim.scale * self.offset + float(self.normal @ sim.translation),
            rms_residual=sim.apply_length(self.rms_residual),
        )

    def parameters(self) -> FloatArray:
        """Flat parameter vector (n, d)."""
        return np.concatenate([self.normal, [self.offset]])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "normal": [float(x) for x in self.normal],
            "offset": self.offset,
            "inlier_count": int(self.inlier_count),
            "rms_residual": float(self.rms_residual),
        }


@dataclass(frozen=True, eq=False, kw_only=True)
class Cylinder:
    """
    Infinite circular cylinder.

    Attributes:
        axis_point: A point on the axis
        axis_direction: Unit axis direction
        radius: Radius (> 0)
        inlier_count: Number of supporting points
        rms_residual: RMS distance of the supporting points
    """

    kind: ClassVar[PrimitiveKind] = PrimitiveKind.CYLINDER

    axis_point: FloatArray
    axis_direction: FloatArray
    radius: float
    inlier_count: int = 0
    rms_residual: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis_point", _vec(self.axis_point))
        object.__setattr__(self, "axis_direction", _vec(self.axis_direction))
        object.__setattr__(self, "radius", float(self.radius))
        _check_unit("cylinder axis", self.axis_direction)
        _check_radius(self.radius)

    def radial(self, points: ArrayLike) -> FloatArray:
        """Component of (x - a) orthogonal to the axis."""
        w = as_points(points) - self.axis_point
        return w - np.outer(w @ self.axis_direction, self.axis_direction)

    def axis_distance(self, points: ArrayLike) -> FloatArray:
        """Distance of each point to the axis line."""
        return row_norms(self.radial(points))

    def implicit(self, points: ArrayLike) -> FloatArray:
        """Signed distance dist_to_axis - r."""
        return self.axis_distance(points) - self.radius

    def distance(self, points: ArrayLike) -> FloatArray:
        return np.abs(self.implicit(points))

    def gradient(self, points: ArrayLike) -> FloatArray:
        q = self.radial(points)
        norms = row_norms(q)
        return q / np.maximum(norms, 1e-300)[:, None]

    def project(self, points: ArrayLike) -> FloatArray:
        pts = as_points(points)
        q = self.radial(pts)
        norms = np.maximum(row_norms(q), 1e-300)
        return pts - q + q * (self.radius / norms)[:, None]

    def canonical(self) -> Cylinder:
        """Copy with canonical axis sign and the axis point closest to the origin."""
        v = canonical_sign(self.axis_direction, tol=1e-12)
        a = self.axis_point - (self.axis_point @ v) * v
        return replace(self, axis_point=a, axis_direction=v)

    def transformed(self, sim: Similarity) -> Cylinder:
        return replace(
            self,
            axis_point=sim.apply(self.axis_point),
            radius=sim.apply_length(self.radius),
            rms_residual=sim.apply_length(self.rms_residual),
        )

    def parameters(self) -> FloatArray:
        c = self.canonical()
        return np.concatenate([c.axis_point, c.axis_direction, [c.radius]])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "axis_point": [float(x) for x in self.axis_point],
            "axis_direction": [float(x) for x in self.axis_direction],
            "radius": self.radius,
            "inlier_count": int(self.inlier_count),
            "rms_residual": float(self.rms_residual),
        }


@dataclass(frozen=True, eq=False, kw_only=True)
class Sphere:
    """
    Sphere |x - c| = r.

    Attributes:
        center: Center c
        radius: Radius (> 0)
        inlier_count: Number of supporting points
        rms_residual: RMS distance of the supporting points
    """

    kind: ClassVar[PrimitiveKind] = PrimitiveKind.SPHERE

    center: FloatArray
    radius: float
    inlier_count: int = 0
    rms_residual: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        _check_radius(self.radius)

    def implicit(self, points: ArrayLike) -> FloatArray:
        return row_norms(as_points(points) - self.center) - self.radius

    def distance(self, points: ArrayLike) -> FloatArray:
        return np.abs(self.implicit(points))

    def gradient(self, points: ArrayLike) -> FloatArray:
        d = as_points(points) - self.center
        return d / np.maximum(row_norms(d), 1e-300)[:, None]

    def project(self, points: ArrayLike) -> FloatArray:
        return self.center + self.gradient(points) * self.radius

    def canonical(self) -> Sphere:
        return self

    def transformed(self, sim: Similarity) -> Sphere:
        return replace(
            self,
            center=sim.apply(self.center),
            radius=sim.apply_length(self.radius),
            rms_residual=sim.apply_length(self.rms_residual),
        )

    def parameters(self) -> FloatArray:
        return np.concatenate([self.center, [self.radius]])

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "center": [float(x) for x in self.center],
            "radius": self.radius,
            "inlier_count": int(self.inlier_count),
            "rms_residual": float(self.rms_residual),
        }


Primitive: TypeAlias = Plane | Cylinder | Sphere


def primitive_from_dict(data: dict[str, Any]) -> Primitive:
    """Rebuild a primitive from its to_dict form."""
    kind = PrimitiveKind(data["kind"])
    stats = {
        "inlier_count": int(data.get("inlier_count", 0)),
        "rms_residual": float(data.get("rms_residual", 0.0)),
    }
    if kind is PrimitiveKind.PLANE:
        return Plane(normal=data["normal"], offset=data["offset"], **stats)
    if kind is PrimitiveKind.CYLINDER:
        return Cylinder(
            axis_point=data["axis_point"],
            axis_direction=data["axis_direction"],
            radius=data["radius"],
            **stats,
        )
    return Sphere(center=data["center"], radius=data["radius"], **stats)


def same_surface(a: Primitive, b: Primitive, tol: float = 1e-6) -> bool:
    """True when two primitives describe the same surface within tol."""
    if a.kind is not b.kind:
        return False
    return bool(np.allclose(a.canonical().parameters(), b.canonical().parameters(), atol=tol))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------

_BERNSTEIN = np.array(
    [
        [1.0, 0.0, 0.0, 0.0],
        [-3.0, 3.0, 0.0, 0.0],
        [3.0, -6.0, 3.0, 0.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
)


def bernstein_basis(t: ArrayLike) -> FloatArray:
    """
    Cubic Bernstein basis values for each parameter.

    Args:
        t: Parameters in [0, 1]

    Returns:
        (M, 4) array of (1-t)^3, 3t(1-t)^2, 3t^2(1-t), t^3
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    s = 1.0 - t
    return np.stack([s**3, 3.0 * t * s**2, 3.0 * t**2 * s, t**3], axis=1)


def bezier_point(control_points: ArrayLike, t: float) -> FloatArray:
    """
    Evaluate a cubic Bezier curve.

    Args:
        control_points: (4, 3) control points P0..P3
        t: Parameter in [0, 1]

    Returns:
        The curve point as a 3-vector

    Raises:
        GeometryError: If t lies outside [0, 1]
    """
    if not 0.0 <= t <= 1.0:
        msg = _ERR_BEZIER_DOMAIN.format(t=t)
        raise GeometryError(msg)
    P = np.asarray(control_points, dtype=np.float64).reshape(4, 3)
    return (bernstein_basis([t]) @ P)[0]


@dataclass(frozen=True, eq=False)
class Line:
    """Line p0 + t u with unit direction u; t is arc length."""

    kind: ClassVar[str] = "line"
    period: ClassVar[float | None] = None

    point: FloatArray
    direction: FloatArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "point", _vec(self.point))
        object.__setattr__(self, "direction", _vec(self.direction))
        _check_unit("line direction", self.direction)

    def evaluate(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        return self.point + np.outer(t, self.direction)

    def derivative(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        return np.broadcast_to(self.direction, (len(t), 3)).copy()

    def closest_parameter(self, points: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Closed-form foot parameters and distances."""
        w = as_points(points) - self.point
        t = w @ self.direction
        return t, row_norms(w - np.outer(t, self.direction))

    def transformed(self, sim: Similarity) -> Line:
        return Line(sim.apply(self.point), self.direction)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "point": [float(x) for x in self.point],
            "direction": [float(x) for x in self.direction],
        }


@dataclass(frozen=True, eq=False)
class Circle:
    """
    Circle c + r (cos t e1 + sin t e2) in the plane with unit normal n.

    e1 is the projection of global +x onto the circle plane, so angles are
    measured from a deterministic origin.
    """

    kind: ClassVar[str] = "circle"
    period: ClassVar[float | None] = TWO_PI

    center: FloatArray
    normal: FloatArray
    radius: float
    basis: tuple[FloatArray, FloatArray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vec(self.center))
        object.__setattr__(self, "normal", _vec(self.normal))
        object.__setattr__(self, "radius", float(self.radius))
        _check_unit("circle normal", self.normal)
        _check_radius(self.radius)
        object.__setattr__(self, "basis", orthonormal_basis(self.normal))

    def evaluate(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        e1, e2 = self.basis
        return self.center + self.radius * (np.outer(np.cos(t), e1) + np.outer(np.sin(t), e2))

    def derivative(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        e1, e2 = self.basis
        return self.radius * (np.outer(-np.sin(t), e1) + np.outer(np.cos(t), e2))

    def closest_parameter(self, points: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Closed-form angle in [0, 2pi) and distance to the circle."""
        q = as_points(points) - self.center
        h = q @ self.normal
        w = q - np.outer(h, self.normal)
        e1, e2 = self.basis
        t = np.mod(np.arctan2(w @ e2, w @ e1), TWO_PI)
        return t, np.hypot(h, row_norms(w) - self.radius)

    def transformed(self, sim: Similarity) -> Circle:
        return Circle(sim.apply(self.center), self.normal, sim.apply_length(self.radius))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "center": [float(x) for x in self.center],
            "normal": [float(x) for x in self.normal],
            "radius": self.radius,
        }


@dataclass(frozen=True, eq=False)
class Bezier:
    """
    Cubic Bezier curve over t in [0, 1].

    Attributes:
        control_points: (4, 3) control points P0..P3
        samples: Optional ordered polyline the curve was fitted to
    """

    kind: ClassVar[str] = "bezier"
    period: ClassVar[float | None] = None

    control_points: FloatArray
    samples: FloatArray | None = None

    def __post_init__(self) -> None:
        P = np.array(self.control_points, dtype=np.float64).reshape(4, 3)
        P.setflags(write=False)
        object.__setattr__(self, "control_points", P)
        if self.samples is not None:
            S = as_points(self.samples).copy()
            S.setflags(write=False)
            object.__setattr__(self, "samples", S)

    def evaluate(self, t: ArrayLike) -> FloatArray:
        return bernstein_basis(t) @ self.control_points

    def derivative(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        s = 1.0 - t
        D = 3.0 * np.diff(self.control_points, axis=0)
        basis = np.stack([s**2, 2.0 * t * s, t**2], axis=1)
        return basis @ D

    def second_derivative(self, t: ArrayLike) -> FloatArray:
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        D2 = 6.0 * np.diff(self.control_points, n=2, axis=0)
        return np.outer(1.0 - t, D2[0]) + np.outer(t, D2[1])

    def closest_parameter(
        self, points: ArrayLike, starts: int = 16, iterations: int = 20
    ) -> tuple[FloatArray, FloatArray]:
        """
        Closest parameter in [0, 1] by Newton iteration from seeded starts.

        Args:
            points: (M, 3) query points
            starts: Number of evenly spaced initial parameters
            iterations: Newton iterations per start

        Returns:
            Tuple of (parameters, distances)
        """
        pts = as_points(points)
        m = len(pts)
        if m == 0:
            return np.empty(0), np.empty(0)
        t = np.tile(np.linspace(0.0, 1.0, starts), m)
        targets = np.repeat(pts, starts, axis=0)
        for _ in range(iterations):
            diff = self.evaluate(t) - targets
            d1 = self.derivative(t)
            d2 = self.second_derivative(t)
            grad = np.einsum("ij,ij->i", diff, d1)
            hess = np.einsum("ij,ij->i", d1, d1) + np.einsum("ij,ij->i", diff, d2)
            step = np.where(hess > 1e-15, grad / np.where(hess > 1e-15, hess, 1.0), 0.0)
            t = np.clip(t - step, 0.0, 1.0)
        dist = row_norms(self.evaluate(t) - targets).reshape(m, starts)
        t = t.reshape(m, starts)
        best = np.argmin(dist, axis=1)
        rows = np.arange(m)
        return t[rows, best], dist[rows, best]

    def split(self, t: float) -> tuple[Bezier, Bezier]:
        """Split at t by de Casteljau subdivision."""
        P = self.control_points
        a = (1 - t) * P[:-1] + t * P[1:]
        b = (1 - t) * a[:-1] + t * a[1:]
        c = (1 - t) * b[:-1] + t * b[1:]
        left = np.stack([P[0], a[0], b[0], c[0]])
        right = np.stack([c[0], b[1], a[2], P[3]])
        return Bezier(left), Bezier(right)

    def restrict(self, t0: float, t1: float) -> Bezier:
        """Bezier over [t0, t1] reparameterized to [0, 1]; samples are kept."""
        if t0 <= 0.0 and t1 >= 1.0:
            return self
        head = self.split(t1)[0] if t1 < 1.0 else self
        inner = head.split(t0 / t1)[1] if t0 > 0.0 and t1 > 0.0 else head
        return Bezier(inner.control_points, self.samples)

    def transformed(self, sim: Similarity) -> Bezier:
        samples = None if self.samples is None else sim.apply(self.samples)
        return Bezier(sim.apply(self.control_points), samples)

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "control_points": [[float(x) for x in row] for row in self.control_points],
        }


@dataclass(frozen=True, eq=False)
class BezierLoop:
    """
    Closed chain of cubic Bezier pieces; piece k covers t in [k, k + 1].

    Parameters are periodic with period equal to the number of pieces, so a
    closed traced intersection stays one curve without corners at its joints.

    Attributes:
        pieces: Pieces in traversal order, each ending where the next starts
    """

    kind: ClassVar[str] = "bezier_loop"

    pieces: tuple[Bezier, ...]

    def __post_init__(self) -> None:
        pieces = tuple(self.pieces)
        if not pieces:
            raise GeometryError(_ERR_LOOP_EMPTY)
        for k, piece in enumerate(pieces):
            following = pieces[(k + 1) % len(pieces)]
            gap = float(np.linalg.norm(piece.control_points[3] - following.control_points[0]))
            if gap > _LOOP_JOINT_TOLERANCE:
                msg = _ERR_LOOP_JOINT.format(k=k, gap=gap)
                raise GeometryError(msg)
        object.__setattr__(self, "pieces", pieces)

    @property
    def period(self) -> float:
        return float(len(self.pieces))

    def _locate(self, t: ArrayLike) -> tuple[IntArray, FloatArray]:
        t = np.mod(np.asarray(t, dtype=np.float64).reshape(-1), self.period)
        index = np.minimum(np.floor(t), len(self.pieces) - 1).astype(np.int64)
        return index, t - index

    def _per_piece(self, t: ArrayLike, method: str) -> FloatArray:
        index, local = self._locate(t)
        out = np.empty((len(index), 3))
        for k, piece in enumerate(self.pieces):
            mask = index == k
            if mask.any():
                out[mask] = getattr(piece, method)(local[mask])
        return out

    def evaluate(self, t: ArrayLike) -> FloatArray:
        return self._per_piece(t, "evaluate")

    def derivative(self, t: ArrayLike) -> FloatArray:
        return self._per_piece(t, "derivative")

    def closest_parameter(self, points: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Best closest parameter over all pieces, in [0, period)."""
        pts = as_points(points)
        if len(pts) == 0:
            return np.empty(0), np.empty(0)
        results = [piece.closest_parameter(pts) for piece in self.pieces]
        dist = np.stack([d for _, d in results])
        best = np.argmin(dist, axis=0)
        rows = np.arange(len(pts))
        params = np.stack([t for t, _ in results])[best, rows] + best
        return np.mod(params, self.period), dist[best, rows]

    def transformed(self, sim: Similarity) -> BezierLoop:
        return BezierLoop(tuple(piece.transformed(sim) for piece in self.pieces))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "pieces": [piece.to_dict()["control_points"] for piece in self.pieces],
        }


Curve: TypeAlias = Line | Circle | Bezier | BezierLoop


def curve_from_dict(data: dict[str, Any]) -> Curve:
    """Rebuild a curve from its to_dict form."""
    kind = data["kind"]
    if kind == "line":
        return Line(data["point"], data["direction"])
    if kind == "circle":
        return Circle(data["center"], data["normal"], data["radius"])
    if kind == "bezier":
        return Bezier(data["control_points"])
    if kind == "bezier_loop":
        return BezierLoop(tuple(Bezier(P) for P in data["pieces"]))
    msg = f"unknown curve kind {kind!r}"
    raise GeometryError(msg)


@dataclass(frozen=True, eq=False)
class CurveSegment:
    """
    A curve trimmed to a parameter interval.

    Attributes:
        geometry: Underlying Line, Circle, Bezier or BezierLoop
        t_range: Closed interval (t_lo, t_hi)
        support_count: Number of edge points assigned to the segment
        source_faces: Patch ids of the two faces the curve came from
        endpoint_corners: Corner indices at t_lo and t_hi (None when absent)
        closed: True for closed curves without corners
    """

    geometry: Curve
    t_range: tuple[float, float]
    support_count: int
    source_faces: tuple[int, int]
    endpoint_corners: tuple[int | None, int | None] = (None, None)
    closed: bool = False

    def __post_init__(self) -> None:
        lo, hi = (float(x) for x in self.t_range)
        object.__setattr__(self, "t_range", (lo, hi))
        valid = lo < hi
        if isinstance(self.geometry, Circle):
            valid = valid and hi - lo <= TWO_PI + 1e-12
        elif isinstance(self.geometry, Bezier):
            valid = valid and lo >= 0.0 and hi <= 1.0
        elif isinstance(self.geometry, BezierLoop):
            valid = valid and hi - lo <= self.geometry.period + 1e-12
        if not valid:
            msg = _ERR_T_RANGE.format(t_range=self.t_range, kind=self.geometry.kind)
            raise GeometryError(msg)
        a, b = self.source_faces
        object.__setattr__(self, "source_faces", (int(a), int(b)))

    @property
    def kind(self) -> str:
        return self.geometry.kind

    @property
    def start(self) -> FloatArray:
        return self.geometry.evaluate(self.t_range[0])[0]

    @property
    def end(self) -> FloatArray:
        return self.geometry.evaluate(self.t_range[1])[0]

    def sample(self, count: int) -> FloatArray:
        """Evenly spaced parameter samples including both ends."""
        return self.geometry.evaluate(np.linspace(self.t_range[0], self.t_range[1], count))

    def length(self, count: int = 256) -> float:
        """Polyline approximation of the arc length."""
        pts = self.sample(count)
        return float(np.sum(row_norms(np.diff(pts, axis=0))))

    def transformed(self, sim: Similarity) -> CurveSegment:
        lo, hi = self.t_range
        if isinstance(self.geometry, Line):
            lo, hi = lo * sim.scale, hi * sim.scale
        return replace(self, geometry=self.geometry.transformed(sim), t_range=(lo, hi))

    def to_dict(self) -> dict[str, Any]:
        return {
            "geometry": self.geometry.to_dict(),
            "t_range": [self.t_range[0], self.t_range[1]],
            "support_count": int(self.support_count),
            "source_faces": [self.source_faces[0], self.source_faces[1]],
            "endpoint_corners": list(self.endpoint_corners),
            "closed": bool(self.closed),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> CurveSegment:
        a, b = data["endpoint_corners"]
        return cls(
            geometry=curve_from_dict(data["geometry"]),
            t_range=(data["t_range"][0], data["t_range"][1]),
            support_count=int(data["support_count"]),
            source_faces=(data["source_faces"][0], data["source_faces"][1]),
            endpoint_corners=(a, b),
            closed=bool(data["closed"]),
        )


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FaceLoop:
    """
    Ordered boundary loop of a face.

    Attributes:
        edges: Edge indices in traversal order
        reversed: Per edge, True when traversed from t_hi to t_lo
    """

    edges: tuple[int, ...]
    reversed: tuple[bool, ...]

    def signed(self) -> list[int]:
        """Signed one-based edge references (negative = reversed)."""
        return [-(e + 1) if r else e + 1 for e, r in zip(self.edges, self.reversed, strict=True)]

    @classmethod
    def from_signed(cls, refs: list[int]) -> FaceLoop:
        return cls(tuple(abs(r) - 1 for r in refs), tuple(r < 0 for r in refs))

    def flipped(self) -> FaceLoop:
        """Same loop traversed in the opposite direction."""
        return FaceLoop(self.edges[::-1], tuple(not r for r in self.reversed[::-1]))


@dataclass(frozen=True, eq=False)
class Face:
    """
    Trimmed face.

    Attributes:
        surface: Supporting primitive
        patch_id: Patch label the face was fitted to
        loops: Closed boundary loops
        open_chains: Edge chains that could not be closed
        watertight: False when some boundary could not be closed
    """

    surface: Primitive
    patch_id: int
    loops: tuple[FaceLoop, ...] = ()
    open_chains: tuple[tuple[int, ...], ...] = ()
    watertight: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "patch_id": int(self.patch_id),
            "surface": self.surface.to_dict(),
            "loops": [loop.signed() for loop in self.loops],
            "open_chains": [list(chain) for chain in self.open_chains],
            "watertight": bool(self.watertight),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Face:
        return cls(
            surface=primitive_from_dict(data["surface"]),
            patch_id=int(data["patch_id"]),
            loops=tuple(FaceLoop.from_signed(list(refs)) for refs in data["loops"]),
            open_chains=tuple(tuple(int(e) for e in chain) for chain in data["open_chains"]),
            watertight=bool(data["watertight"]),
        )


def _loop_corners(edge: CurveSegment, reversed_: bool) -> tuple[int | None, int | None]:
    a, b = edge.endpoint_corners
    return (b, a) if reversed_ else (a, b)


@dataclass(frozen=True, eq=False)
class BRepModel:
    """
    Boundary representation: corners, trimmed edges and trimmed faces.

    Attributes:
        corners: (M, 3) corner positions
        edges: Curve segments
        faces: Trimmed faces
    """

    corners: FloatArray
    edges: tuple[CurveSegment, ...]
    faces: tuple[Face, ...]

    def __post_init__(self) -> None:
        corners = np.array(self.corners, dtype=np.float64).reshape(-1, 3)
        corners.setflags(write=False)
        object.__setattr__(self, "corners", corners)
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "faces", tuple(self.faces))

    @classmethod
    def empty(cls) -> BRepModel:
        return cls(np.empty((0, 3)), (), ())

    def edge_faces(self) -> dict[int, tuple[int, ...]]:
        """Map each edge index to the faces whose loops reference it."""
        incidence: dict[int, list[int]] = {i: [] for i in range(len(self.edges))}
        for f, face in enumerate(self.faces):
            for loop in face.loops:
                for e in loop.edges:
                    if e in incidence and f not in incidence[e]:
                        incidence[e].append(f)
        return {e: tuple(fs) for e, fs in incidence.items()}

    def violations(self) -> list[str]:
        """List every violated BRepModel invariant (empty when valid)."""
        problems: list[str] = []
        m = len(self.corners)
        for i, edge in enumerate(self.edges):
            for c in edge.endpoint_corners:
                if c is not None and not 0 <= c < m:
                    problems.append(f"edge {i} references missing corner {c}")
        for f, face in enumerate(self.faces):
            for loop in face.loops:
                if any(not 0 <= e < len(self.edges) for e in loop.edges):
                    problems.append(f"face {f} loop references a missing edge")
                    continue
                if len(loop.edges) == 1:
                    edge = self.edges[loop.edges[0]]
                    a, b = edge.endpoint_corners
                    if not (edge.closed or (a is not None and a == b)):
                        problems.append(f"face {f} single-edge loop {loop.edges[0]} is open")
                    continue
                ends = [
                    _loop_corners(self.edges[e], r)
                    for e, r in zip(loop.edges, loop.reversed, strict=True)
                ]
                for k in range(len(ends)):
                    here, nxt = ends[k][1], ends[(k + 1) % len(ends)][0]
                    if here is None or here != nxt:
                        problems.append(f"face {f} loop breaks after edge {loop.edges[k]}")
        return problems

    def validate(self) -> None:
        """
        Check the model invariants.

        Raises:
            GeometryError: Listing every violated invariant
        """
        problems = self.violations()
        if problems:
            msg = "; ".join(problems)
            raise GeometryError(msg)

    def is_watertight(self) -> bool:
        """Every face closed and every edge shared by exactly two faces."""
        if not self.faces or any(not f.watertight for f in self.faces):
            return False
        return all(len(fs) == 2 for fs in self.edge_faces().values())

    def watertight_report(self) -> list[dict[str, Any]]:
        """Per-face summary of closure problems."""
        return [
            {
                "face": f,
                "patch_id": face.patch_id,
                "open_chains": [list(c) for c in face.open_chains],
            }
            for f, face in enumerate(self.faces)
            if not face.watertight
        ]

    def transformed(self, sim: Similarity) -> BRepModel:
        """Model mapped through a similarity."""
        return BRepModel(
            corners=sim.apply(self.corners) if len(self.corners) else self.corners,
            edges=tuple(e.transformed(sim) for e in self.edges),
            faces=tuple(replace(f, surface=f.surface.transformed(sim)) for f in self.faces),
        )
