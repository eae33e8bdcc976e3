"""
RANSAC primitive fitting.

Provides functionality to:
- Fit planes, spheres and cylinders to a patch with RANSAC
- Refine the best hypothesis by least squares (TLS or Gauss-Newton)
- Select the primitive type with the highest consensus, preferring simpler types
- Fit every labeled patch of a cloud with a deterministic per-patch random stream
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.geometry import (
    PRIMITIVE_ORDER,
    Cylinder,
    Plane,
    Primitive,
    Sphere,
)
from brep_fitter.utils import (
    ConfigError,
    FloatArray,
    IntArray,
    as_points,
    orthonormal_basis,
    require_positive,
    unit,
)

logger = logging.getLogger(__name__)

_ERR_DEGENERATE = "degenerate patch"
_ERR_UNFITTABLE = "unfittable patch"
_ERR_TOO_FEW = "{kind} fit needs at least {needed} points, got {got}"
_ERR_NO_NORMALS = "cylinder fitting needs normals; run estimate_normals first"

_SCORE_BLOCK = 1 << 20
_GN_MAX_ITERATIONS = 50
_GN_TOLERANCE = 1e-10
_PARALLEL_NORMALS = 1e-3
_PLANE_REFITS = 5


class FittingError(Exception):
    """Exception raised when a patch cannot be fitted."""


@dataclass(frozen=True)
class RansacConfig:
    """
    RANSAC parameters.

    Attributes:
        max_iterations: Number of sampled hypotheses
        inlier_threshold: Inlier distance epsilon (unit length)
        min_inlier_ratio: Minimum accepted inlier fraction
        seed: Base seed of the per-patch random streams
        type_preference_margin: Ratio margin within which simpler types win
        max_radius: Cylinder/sphere hypotheses above this radius are rejected
    """

    max_iterations: int = 1024
    inlier_threshold: float = 0.01
    min_inlier_ratio: float = 0.5
    seed: int = 0
    type_preference_margin: float = 0.02
    max_radius: float = 10.0

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            msg = f"ransac.max_iterations must be >= 1, got {self.max_iterations}"
            raise ConfigError(msg)
        require_positive("ransac", inlier_threshold=self.inlier_threshold, max_radius=self.max_radius)
        if not 0 < self.min_inlier_ratio <= 1:
            msg = f"ransac.min_inlier_ratio must lie in (0, 1], got {self.min_inlier_ratio}"
            raise ConfigError(msg)
        if not 0 <= self.type_preference_margin < 1:
            msg = f"ransac.type_preference_margin must lie in [0, 1), got {self.type_preference_margin}"
            raise ConfigError(msg)


@dataclass(frozen=True, eq=False)
class PrimitiveFit:
    """
    Result of fitting one primitive.

    Attributes:
        primitive: Fitted surface carrying inlier_count and rms_residual
        inlier_indices: Sorted unique indices of the inliers
        residuals: Unsigned distance of each inlier
        num_points: Size of the point set the fit was scored on
        patch_id: Patch label, UNLABELED for anonymous point sets
    """

    primitive: Primitive
    inlier_indices: IntArray
    residuals: FloatArray
    num_points: int
    patch_id: int = UNLABELED

    @property
    def inlier_ratio(self) -> float:
        return len(self.inlier_indices) / self.num_points if self.num_points else 0.0

    def summary(self) -> dict[str, Any]:
        return {
            "patch_id": self.patch_id,
            "kind": self.primitive.kind.value,
            "inliers": len(self.inlier_indices),
            "points": self.num_points,
            "inlier_ratio": self.inlier_ratio,
            "rms_residual": self.primitive.rms_residual,
        }


@dataclass
class FitReport:
    """Per-patch fits plus the patches that could not be fitted."""

    fits: dict[int, PrimitiveFit] = field(default_factory=dict)
    failures: dict[int, str] = field(default_factory=dict)


def patch_rng(seed: int, patch_id: int = UNLABELED) -> np.random.Generator:
    """Independent deterministic random stream for (seed, patch_id)."""
    return np.random.default_rng([seed % (1 << 64), patch_id + 1])


# ---------------------------------------------------------------------------
# Shared RANSAC machinery
# ---------------------------------------------------------------------------


def _sample_rows(rng: np.random.Generator, n: int, size: int, iterations: int) -> IntArray:
    """Draw hypothesis index rows; rows with repeated indices are dropped."""
    rows = rng.integers(0, n, size=(iterations, size))
    ordered = np.sort(rows, axis=1)
    distinct = np.all(np.diff(ordered, axis=1) > 0, axis=1)
    return rows[distinct]


def _best_hypothesis(
    distances: Callable[[slice], FloatArray], count: int, n_points: int, eps: float
) -> tuple[int, int]:
    """Index and inlier count of the first hypothesis with the most inliers."""
    block = max(1, _SCORE_BLOCK // max(n_points, 1))
    best_idx, best_count = -1, -1
    for start in range(0, count, block):
        chunk = slice(start, min(start + block, count))
        counts = np.count_nonzero(distances(chunk) <= eps, axis=1)
        local = int(np.argmax(counts))
        if counts[local] > best_count:
            best_idx, best_count = start + local, int(counts[local])
    return best_idx, best_count


def _rms(values: FloatArray) -> float:
    return float(np.sqrt(np.mean(values**2))) if len(values) else 0.0


def _gauss_newton(
    state: Any,
    residuals: Callable[[Any], FloatArray],
    jacobian: Callable[[Any], FloatArray],
    retract: Callable[[Any, FloatArray], Any],
) -> Any:
    """
    Gauss-Newton with step halving.

    Steps that increase the cost are halved until they decrease it; the
    iteration stops after 50 steps, when no decreasing step exists, or when
    the relative cost change drops below 1e-10.
    """
    cost = float(np.sum(residuals(state) ** 2))
    for _ in range(_GN_MAX_ITERATIONS):
        J = jacobian(state)
        step = np.linalg.lstsq(J, -residuals(state), rcond=None)[0]
        scale = 1.0
        accepted = None
        for _ in range(30):
            trial = retract(state, scale * step)
            if trial is not None:
                trial_cost = float(np.sum(residuals(trial) ** 2))
                if math.isfinite(trial_cost) and trial_cost <= cost:
                    accepted = (trial, trial_cost)
                    break
            scale *= 0.5
        if accepted is None:
            break
        state, new_cost = accepted
        change = (cost - new_cost) / max(cost, 1e-300)
        cost = new_cost
        if change < _GN_TOLERANCE:
            break
    return state


def _finish(
    primitive: Primitive,
    points: FloatArray,
    hypothesis_inliers: IntArray,
    hypothesis: Primitive,
    eps: float,
    patch_id: int,
    *,
    keep_consensus: bool = True,
) -> PrimitiveFit:
    """
    Accept the refined model only when it does not raise RMS on the hypothesis
    inliers and, with keep_consensus, keeps at least as many inliers.
    """
    before = _rms(hypothesis.distance(points[hypothesis_inliers]))
    after = _rms(primitive.distance(points[hypothesis_inliers]))
    refined_count = int(np.count_nonzero(primitive.distance(points) <= eps))
    chosen = primitive
    if not (after <= before and (refined_count >= len(hypothesis_inliers) or not keep_consensus)):
        logger.debug("refinement rejected (rms %.3g -> %.3g)", before, after)
        chosen = hypothesis
    distances = chosen.distance(points)
    inliers = np.flatnonzero(distances <= eps).astype(np.int64)
    residuals = distances[inliers]
    chosen = type(chosen)(
        **{**_fields(chosen), "inlier_count": len(inliers), "rms_residual": _rms(residuals)}
    )
    return PrimitiveFit(chosen.canonical(), inliers, residuals, len(points), patch_id)


def _fields(primitive: Primitive) -> dict[str, Any]:
    if isinstance(primitive, Plane):
        return {"normal": primitive.normal, "offset": primitive.offset}
    if isinstance(primitive, Cylinder):
        return {
            "axis_point": primitive.axis_point,
            "axis_direction": primitive.axis_direction,
            "radius": primitive.radius,
        }
    return {"center": primitive.center, "radius": primitive.radius}


# ---------------------------------------------------------------------------
# Plane
# ---------------------------------------------------------------------------


def _tls_plane(points: FloatArray) -> Plane:
    centroid = points.mean(axis=0)
    centered = points - centroid
    _, vectors = np.linalg.eigh(centered.T @ centered)
    normal = unit(vectors[:, 0])
    return Plane(normal=normal, offset=float(normal @ centroid))


def fit_plane_ransac(
    points: ArrayLike,
    cfg: RansacConfig,
    *,
    patch_id: int = UNLABELED,
    rng: np.random.Generator | None = None,
) -> PrimitiveFit:
    """
    Fit a plane with RANSAC and a total-least-squares refit.

    The refit is repeated on the reselected inliers until the inlier set
    settles, at most five times. The last refit is kept whenever it does not
    raise RMS on the hypothesis inliers, even if it drops boundary points.

    Args:
        points: (N, 3) patch points
        cfg: RANSAC configuration
        patch_id: Patch label, also selects the random stream
        rng: Explicit random generator (overrides the per-patch stream)

    Returns:
        PrimitiveFit holding a Plane

    Raises:
        FittingError: If fewer than 3 points are given or every sample is collinear
    """
    pts = as_points(points)
    n = len(pts)
    if n < 3:
        msg = _ERR_TOO_FEW.format(kind="plane", needed=3, got=n)
        raise FittingError(msg)
    rng = rng or patch_rng(cfg.seed, patch_id)
    rows = _sample_rows(rng, n, 3, cfg.max_iterations)
    p0, p1, p2 = pts[rows[:, 0]], pts[rows[:, 1]], pts[rows[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    lengths = np.linalg.norm(normals, axis=1)
    extent = float(np.max(np.ptp(pts, axis=0))) or 1.0
    valid = lengths > 1e-12 * extent**2
    if not np.any(valid):
        raise FittingError(_ERR_DEGENERATE)
    normals = normals[valid] / lengths[valid, None]
    offsets = np.einsum("ij,ij->i", normals, p0[valid])

    def distances(chunk: slice) -> FloatArray:
        return np.abs(normals[chunk] @ pts.T - offsets[chunk, None])

    best, _ = _best_hypothesis(distances, len(normals), n, cfg.inlier_threshold)
    hypothesis = Plane(normal=normals[best], offset=float(offsets[best]))
    eps = cfg.inlier_threshold
    hyp_inliers = np.flatnonzero(hypothesis.distance(pts) <= eps)
    refined, current = hypothesis, hyp_inliers
    for _ in range(_PLANE_REFITS):
        if len(current) < 3:
            break
        refined = _tls_plane(pts[current])
        selected = np.flatnonzero(refined.distance(pts) <= eps)
        if np.array_equal(selected, current):
            break
        current = selected
    return _finish(refined, pts, hyp_inliers, hypothesis, eps, patch_id, keep_consensus=False)


# ---------------------------------------------------------------------------
# Sphere
# ---------------------------------------------------------------------------


def _refine_sphere(points: FloatArray, sphere: Sphere) -> Sphere:
    def residuals(state: FloatArray) -> FloatArray:
        return np.linalg.norm(points - state[:3], axis=1) - state[3]

    def jacobian(state: FloatArray) -> FloatArray:
        d = points - state[:3]
        dist = np.maximum(np.linalg.norm(d, axis=1), 1e-300)
        return np.column_stack([-d / dist[:, None], -np.ones(len(points))])

    def retract(state: FloatArray, step: FloatArray) -> FloatArray | None:
        trial = state + step
        return trial if trial[3] > 0 else None

    state = _gauss_newton(np.concatenate([sphere.center, [sphere.radius]]), residuals, jacobian, retract)
    return Sphere(center=state[:3], radius=float(state[3]))


def fit_sphere_ransac(
    points: ArrayLike,
    cfg: RansacConfig,
    *,
    patch_id: int = UNLABELED,
    rng: np.random.Generator | None = None,
) -> PrimitiveFit:
    """
    Fit a sphere with 4-point RANSAC and Gauss-Newton refinement.

    Args:
        points: (N, 3) patch points
        cfg: RANSAC configuration
        patch_id: Patch label, also selects the random stream
        rng: Explicit random generator

    Returns:
        PrimitiveFit holding a Sphere

    Raises:
        FittingError: If every sample is coplanar or has radius above cfg.max_radius
    """
    pts = as_points(points)
    n = len(pts)
    if n < 4:
        msg = _ERR_TOO_FEW.format(kind="sphere", needed=4, got=n)
        raise FittingError(msg)
    rng = rng or patch_rng(cfg.seed, patch_id)
    rows = _sample_rows(rng, n, 4, cfg.max_iterations)
    sample = pts[rows]
    A = np.concatenate([2.0 * sample, np.ones((len(rows), 4, 1))], axis=2)
    b = np.einsum("hij,hij->hi", sample, sample)
    conditioned = np.linalg.cond(A) < 1e10
    if not np.any(conditioned):
        raise FittingError(_ERR_DEGENERATE)
    solution = np.linalg.solve(A[conditioned], b[conditioned][..., None])[..., 0]
    centers = solution[:, :3]
    radius_sq = solution[:, 3] + np.einsum("ij,ij->i", centers, centers)
    radii = np.sqrt(np.maximum(radius_sq, 0.0))
    valid = (radius_sq > 0) & (radii <= cfg.max_radius)
    if not np.any(valid):
        raise FittingError(_ERR_DEGENERATE)
    centers, radii = centers[valid], radii[valid]

    def distances(chunk: slice) -> FloatArray:
        diff = pts[None, :, :] - centers[chunk, None, :]
        return np.abs(np.linalg.norm(diff, axis=2) - radii[chunk, None])

    best, _ = _best_hypothesis(distances, len(centers), n, cfg.inlier_threshold)
    hypothesis = Sphere(center=centers[best], radius=float(radii[best]))
    hyp_inliers = np.flatnonzero(hypothesis.distance(pts) <= cfg.inlier_threshold)
    refined = _refine_sphere(pts[hyp_inliers], hypothesis)
    if refined.radius > cfg.max_radius:
        refined = hypothesis
    return _finish(refined, pts, hyp_inliers, hypothesis, cfg.inlier_threshold, patch_id)


# ---------------------------------------------------------------------------
# Cylinder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CylinderState:
    point: FloatArray
    direction: FloatArray
    radius: float


def _refine_cylinder(points: FloatArray, cylinder: Cylinder) -> Cylinder:
    """Gauss-Newton over a 5-dof local parameterization of (a, v, r)."""

    def residuals(state: _CylinderState) -> FloatArray:
        w = points - state.point
        q = w - np.outer(w @ state.direction, state.direction)
        return np.linalg.norm(q, axis=1) - state.radius

    def jacobian(state: _CylinderState) -> FloatArray:
        e1, e2 = orthonormal_basis(state.direction)
        w = points - state.point
        along = w @ state.direction
        q = w - np.outer(along, state.direction)
        u = q / np.maximum(np.linalg.norm(q, axis=1), 1e-300)[:, None]
        return np.column_stack(
            [-along * (u @ e1), -along * (u @ e2), -(u @ e1), -(u @ e2), -np.ones(len(points))]
        )

    def retract(state: _CylinderState, step: FloatArray) -> _CylinderState | None:
        e1, e2 = orthonormal_basis(state.direction)
        radius = state.radius + step[4]
        if radius <= 0:
            return None
        direction = unit(state.direction + step[0] * e1 + step[1] * e2)
        point = state.point + step[2] * e1 + step[3] * e2
        return _CylinderState(point, direction, float(radius))

    start = _CylinderState(cylinder.axis_point, cylinder.axis_direction, cylinder.radius)
    state = _gauss_newton(start, residuals, jacobian, retract)
    return Cylinder(axis_point=state.point, axis_direction=state.direction, radius=state.radius)


def fit_cylinder_ransac(
    points: ArrayLike,
    normals: ArrayLike | None,
    cfg: RansacConfig,
    *,
    patch_id: int = UNLABELED,
    rng: np.random.Generator | None = None,
) -> PrimitiveFit:
    """
    Fit a cylinder from 2-point-with-normal samples and Gauss-Newton refinement.

    The axis direction of a sample is n1 x n2; the axis point is where the two
    normal lines meet in the plane orthogonal to the axis.

    Args:
        points: (N, 3) patch points
        normals: (N, 3) unit normals
        cfg: RANSAC configuration
        patch_id: Patch label, also selects the random stream
        rng: Explicit random generator

    Returns:
        PrimitiveFit holding a Cylinder

    Raises:
        FittingError: If normals are missing or no sample yields a valid axis
    """
    if normals is None:
        raise FittingError(_ERR_NO_NORMALS)
    pts = as_points(points)
    nrm = as_points(normals)
    n = len(pts)
    if n < 2:
        msg = _ERR_TOO_FEW.format(kind="cylinder", needed=2, got=n)
        raise FittingError(msg)
    rng = rng or patch_rng(cfg.seed, patch_id)
    rows = _sample_rows(rng, n, 2, cfg.max_iterations)
    p1, p2 = pts[rows[:, 0]], pts[rows[:, 1]]
    n1, n2 = nrm[rows[:, 0]], nrm[rows[:, 1]]
    axes = np.cross(n1, n2)
    lengths = np.linalg.norm(axes, axis=1)
    keep = lengths >= _PARALLEL_NORMALS
    if not np.any(keep):
        raise FittingError(_ERR_DEGENERATE)
    p1, p2, n1, n2 = p1[keep], p2[keep], n1[keep], n2[keep]
    axes = axes[keep] / lengths[keep, None]

    # normal lines p1 + s1 n1 and p2 + s2 n2 meet on the axis
    delta = p2 - p1
    c = np.einsum("ij,ij->i", n1, n2)
    aa = np.einsum("ij,ij->i", n1, n1)
    bb = np.einsum("ij,ij->i", n2, n2)
    r1 = np.einsum("ij,ij->i", n1, delta)
    r2 = -np.einsum("ij,ij->i", n2, delta)
    det = aa * bb - c * c
    s1 = (bb * r1 + c * r2) / det
    anchors = p1 + s1[:, None] * n1
    anchors -= np.einsum("ij,ij->i", anchors, axes)[:, None] * axes

    def radial(sample: FloatArray, idx: slice | np.ndarray) -> FloatArray:
        w = sample - anchors[idx]
        return np.linalg.norm(w - np.einsum("ij,ij->i", w, axes[idx])[:, None] * axes[idx], axis=1)

    every = slice(None)
    radii = 0.5 * (radial(p1, every) + radial(p2, every))
    valid = np.isfinite(radii) & (radii > 0) & (radii <= cfg.max_radius)
    if not np.any(valid):
        raise FittingError(_ERR_DEGENERATE)
    anchors, axes, radii = anchors[valid], axes[valid], radii[valid]

    def distances(chunk: slice) -> FloatArray:
        w = pts[None, :, :] - anchors[chunk, None, :]
        along = np.einsum("hnj,hj->hn", w, axes[chunk])
        sq = np.einsum("hnj,hnj->hn", w, w) - along**2
        return np.abs(np.sqrt(np.maximum(sq, 0.0)) - radii[chunk, None])

    best, _ = _best_hypothesis(distances, len(radii), n, cfg.inlier_threshold)
    hypothesis = Cylinder(axis_point=anchors[best], axis_direction=axes[best], radius=float(radii[best]))
    hyp_inliers = np.flatnonzero(hypothesis.distance(pts) <= cfg.inlier_threshold)
    refined = _refine_cylinder(pts[hyp_inliers], hypothesis) if len(hyp_inliers) >= 5 else hypothesis
    if refined.radius > cfg.max_radius:
        refined = hypothesis
    return _finish(refined, pts, hyp_inliers, hypothesis, cfg.inlier_threshold, patch_id)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------


def select_primitive(
    points: ArrayLike,
    normals: ArrayLike | None,
    cfg: RansacConfig,
    *,
    patch_id: int = UNLABELED,
) -> PrimitiveFit:
    """
    Run every fitter and keep the type with the highest consensus.

    A simpler type (Plane < Cylinder < Sphere) wins when its inlier ratio is
    within cfg.type_preference_margin of the best ratio.

    Args:
        points: (N, 3) patch points
        normals: Optional (N, 3) unit normals; without them no cylinder is tried
        cfg: RANSAC configuration
        patch_id: Patch label

    Returns:
        The selected PrimitiveFit

    Raises:
        FittingError: If the patch has fewer than 4 points or the best ratio
            is below cfg.min_inlier_ratio
    """
    pts = as_points(points)
    if len(pts) < 4:
        msg = _ERR_TOO_FEW.format(kind="primitive", needed=4, got=len(pts))
        raise FittingError(msg)

    candidates: dict[str, PrimitiveFit] = {}
    attempts: list[tuple[str, Callable[[], PrimitiveFit]]] = [
        ("plane", lambda: fit_plane_ransac(pts, cfg, patch_id=patch_id)),
        ("cylinder", lambda: fit_cylinder_ransac(pts, normals, cfg, patch_id=patch_id)),
        ("sphere", lambda: fit_sphere_ransac(pts, cfg, patch_id=patch_id)),
    ]
    if normals is None:
        logger.warning("patch %d has no normals; cylinder fitting skipped", patch_id)
        attempts.pop(1)
    for kind, attempt in attempts:
        try:
            candidates[kind] = attempt()
        except FittingError as e:
            logger.debug("patch %d: %s fit failed: %s", patch_id, kind, e)

    if not candidates:
        msg = f"{_ERR_UNFITTABLE} {patch_id}: no fitter produced a hypothesis"
        raise FittingError(msg)
    best_ratio = max(fit.inlier_ratio for fit in candidates.values())
    if best_ratio < cfg.min_inlier_ratio:
        msg = f"{_ERR_UNFITTABLE} {patch_id}: best inlier ratio {best_ratio:.3f} < {cfg.min_inlier_ratio}"
        raise FittingError(msg)
    for kind in PRIMITIVE_ORDER:
        fit = candidates.get(kind.value)
        if fit is not None and fit.inlier_ratio >= best_ratio - cfg.type_preference_margin:
            logger.debug("patch %d -> %s (ratio %.3f)", patch_id, kind.value, fit.inlier_ratio)
            return fit
    msg = f"{_ERR_UNFITTABLE} {patch_id}"
    raise FittingError(msg)


def fit_patch(cloud: LabeledPointCloud, patch_id: int, cfg: RansacConfig) -> PrimitiveFit:
    """
    Fit one labeled patch of a cloud.

    Inlier indices of the returned fit index into the whole cloud.
    """
    indices = np.flatnonzero(cloud.patch_id == patch_id)
    normals = None if cloud.normals is None else cloud.normals[indices]
    fit = select_primitive(cloud.points[indices], normals, cfg, patch_id=patch_id)
    return PrimitiveFit(
        fit.primitive,
        indices[fit.inlier_indices].astype(np.int64),
        fit.residuals,
        fit.num_points,
        patch_id,
    )


def fit_patches(cloud: LabeledPointCloud, cfg: RansacConfig) -> FitReport:
    """
    Fit every labeled patch; unlabeled points never vote.

    Args:
        cloud: Labeled cloud (normals recommended)
        cfg: RANSAC configuration

    Returns:
        FitReport with fits and the failure reason per unfittable patch
    """
    report = FitReport()
    for patch_id in cloud.labels:
        try:
            report.fits[patch_id] = fit_patch(cloud, patch_id, cfg)
        except FittingError as e:
            logger.warning("patch %d excluded: %s", patch_id, e)
            report.failures[patch_id] = str(e)
    return report
