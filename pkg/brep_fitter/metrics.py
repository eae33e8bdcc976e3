"""
Segmentation and reconstruction metrics.

Provides functionality to:
- Match predicted and ground-truth patches by mean minimal distance
- Compute patch precision, recall and F1 under the tau rule
- Compute Chamfer and Hausdorff distances between point sets
- Sample B-rep faces and edges for CAD metrics
- Build per-model and aggregate metric reports
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Any

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from brep_fitter.charts import face_region, sampling_window
from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.geometry import WORKING_BOX, BRepModel, Face, Sphere
from brep_fitter.utils import FloatArray, as_points, require_positive

logger = logging.getLogger(__name__)

_ERR_EMPTY_SET = "{name} point set is empty"
_ERR_EMPTY_PATCHES = "{name} has no patches"
_ERR_NO_LABELS = "no labeled patches in {name} cloud"
_ERR_EMPTY_MODEL = "empty model: no faces to sample"
_ERR_RATE = "{name} must lie in [0, 1], got {value!r}"

_MAX_REJECTION_ROUNDS = 64


class MetricError(ValueError):
    """Exception raised when a metric is undefined for its inputs."""


@dataclass(frozen=True)
class MetricConfig:
    """
    Metric parameters.

    Attributes:
        tau: Patch matching threshold in unit length
        surface_samples: Sampled points per face for CAD metrics
        curve_samples: Sampled points per edge for CAD metrics
        edge_threshold: Minimum edge_flag of a ground-truth edge point
    """

    tau: float = 0.08
    surface_samples: int = 4096
    curve_samples: int = 512
    edge_threshold: float = 0.5

    def __post_init__(self) -> None:
        require_positive(
            "metrics",
            tau=self.tau,
            surface_samples=self.surface_samples,
            curve_samples=self.curve_samples,
            edge_threshold=self.edge_threshold,
        )


@dataclass(frozen=True, eq=False)
class PatchSet:
    """Patches as non-empty 3D point sets."""

    patches: tuple[FloatArray, ...]

    def __post_init__(self) -> None:
        patches = tuple(as_points(p) for p in self.patches)
        for i, p in enumerate(patches):
            if len(p) == 0:
                msg = f"patch {i} is empty"
                raise MetricError(msg)
        object.__setattr__(self, "patches", patches)

    def __len__(self) -> int:
        return len(self.patches)

    @classmethod
    def from_cloud(cls, cloud: LabeledPointCloud) -> PatchSet:
        """One patch per label; UNLABELED points belong to no patch."""
        return cls(tuple(cloud.points[idx] for idx in cloud.patch_indices().values()))

    @classmethod
    def edges_of(cls, cloud: LabeledPointCloud, threshold: float = 0.5) -> PatchSet:
        """A single patch of the edge points, or no patch when there are none."""
        mask = cloud.edge_mask(threshold)
        return cls((cloud.points[mask],) if mask.any() else ())


def _points(values: ArrayLike, name: str) -> FloatArray:
    pts = as_points(np.asarray(values, dtype=np.float64).reshape(-1, 3))
    if len(pts) == 0:
        raise MetricError(_ERR_EMPTY_SET.format(name=name))
    return pts


def _nearest(source: FloatArray, target: FloatArray | cKDTree) -> FloatArray:
    tree = target if isinstance(target, cKDTree) else cKDTree(target)
    dist, _ = tree.query(source, k=1)
    return np.asarray(dist, dtype=np.float64)


def mean_min_distance(S: ArrayLike, G: ArrayLike) -> float:
    """
    Mean over points of S of the distance to the nearest point of G.

    Raises:
        MetricError: If either set is empty
    """
    s, g = _points(S, "first"), _points(G, "second")
    return float(_nearest(s, g).mean())


def _matched_fraction(sources: PatchSet, targets: PatchSet, tau: float) -> float:
    trees = [cKDTree(t) for t in targets.patches]
    matched = 0
    for patch in sources.patches:
        best = min(float(_nearest(patch, tree).mean()) for tree in trees)
        matched += best <= tau
    return matched / len(sources)


def patch_precision(pred: PatchSet, gt: PatchSet, cfg: MetricConfig) -> float:
    """
    Fraction of predicted patches S_i with min_j D(S_i, G_j) <= tau.

    Raises:
        MetricError: If either patch set is empty
    """
    if len(pred) == 0:
        raise MetricError(_ERR_EMPTY_PATCHES.format(name="prediction"))
    if len(gt) == 0:
        raise MetricError(_ERR_EMPTY_PATCHES.format(name="ground truth"))
    return _matched_fraction(pred, gt, cfg.tau)


def patch_recall(pred: PatchSet, gt: PatchSet, cfg: MetricConfig) -> float:
    """
    Fraction of ground-truth patches G_j with min_i D(G_j, S_i) <= tau.

    D is evaluated from the ground-truth side, unlike precision.

    Raises:
        MetricError: If either patch set is empty
    """
    if len(gt) == 0:
        raise MetricError(_ERR_EMPTY_PATCHES.format(name="ground truth"))
    if len(pred) == 0:
        raise MetricError(_ERR_EMPTY_PATCHES.format(name="prediction"))
    return _matched_fraction(gt, pred, cfg.tau)


def f1(prec: float, rec: float) -> float:
    """Harmonic mean of precision and recall; 0 when both are 0."""
    for name, value in (("precision", prec), ("recall", rec)):
        if not 0.0 <= value <= 1.0:
            raise MetricError(_ERR_RATE.format(name=name, value=value))
    if prec + rec == 0:
        return 0.0
    return 2.0 * prec * rec / (prec + rec)


def chamfer(A: ArrayLike, B: ArrayLike) -> float:
    """Symmetric Chamfer distance 0.5 D(A, B) + 0.5 D(B, A)."""
    a, b = _points(A, "first"), _points(B, "second")
    return 0.5 * float(_nearest(a, b).mean()) + 0.5 * float(_nearest(b, a).mean())


def hausdorff(A: ArrayLike, B: ArrayLike) -> float:
    """Largest nearest-neighbor distance in either direction."""
    a, b = _points(A, "first"), _points(B, "second")
    return max(float(_nearest(a, b).max()), float(_nearest(b, a).max()))


# ---------------------------------------------------------------------------
# Model sampling
# ---------------------------------------------------------------------------


def _in_working_box(points: FloatArray) -> np.ndarray:
    lo, hi = WORKING_BOX
    return np.all((points >= lo) & (points <= hi), axis=1)


def _sample_face(model: BRepModel, face: Face, count: int, rng: np.random.Generator) -> FloatArray:
    region = face_region(model, face)
    surface = face.surface
    chunks: list[FloatArray] = []
    found = 0
    for _ in range(_MAX_REJECTION_ROUNDS):
        if isinstance(surface, Sphere):
            q = rng.normal(size=(count, 3))
            pts = surface.center + surface.radius * q / np.linalg.norm(q, axis=1, keepdims=True)
            keep = region.contains(region.chart.to_uv(pts))
        else:
            umin, vmin, umax, vmax = sampling_window(region)
            uv = rng.uniform((umin, vmin), (umax, vmax), size=(count, 2))
            pts = region.chart.from_uv(uv)
            keep = region.contains(uv)
        if region.bounds is None:
            keep &= _in_working_box(pts)
        chunks.append(pts[keep])
        found += int(keep.sum())
        if found >= count:
            break
    if found < count:
        logger.warning("face %d: only %d of %d surface samples accepted", face.patch_id, found, count)
    return np.concatenate(chunks)[:count] if chunks else np.empty((0, 3))


def sample_model_surfaces(model: BRepModel, count: int = 4096, *, seed: int = 0) -> FloatArray:
    """
    Uniform area samples of every face, rejection-sampled against its trim loops.

    Args:
        model: B-rep model
        count: Samples per face
        seed: Sampling seed

    Returns:
        (N, 3) samples of all faces in face order
    """
    rng = np.random.default_rng(seed)
    samples = [_sample_face(model, face, count, rng) for face in model.faces]
    return np.concatenate(samples) if samples else np.empty((0, 3))


def sample_model_edges(model: BRepModel, count: int = 512) -> FloatArray:
    """count parameter-uniform samples per edge."""
    samples = [edge.sample(count) for edge in model.edges]
    return np.concatenate(samples) if samples else np.empty((0, 3))


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _prf(pred: PatchSet, gt: PatchSet, cfg: MetricConfig) -> tuple[float, float, float]:
    prec = patch_precision(pred, gt, cfg)
    rec = patch_recall(pred, gt, cfg)
    return prec, rec, f1(prec, rec)


def segmentation_report(
    pred: LabeledPointCloud, gt: LabeledPointCloud, cfg: MetricConfig
) -> dict[str, Any]:
    """
    Patch and edge precision, recall and F1 of a predicted labeling.

    Edge metrics treat the edge points of each cloud as one patch; they are
    None when either cloud has no edge points.

    Raises:
        MetricError: If either cloud has no labeled patches
    """
    for name, cloud in (("prediction", pred), ("ground truth", gt)):
        if not np.any(cloud.patch_id != UNLABELED):
            raise MetricError(_ERR_NO_LABELS.format(name=name))
    prec, rec, f = _prf(PatchSet.from_cloud(pred), PatchSet.from_cloud(gt), cfg)
    report: dict[str, Any] = {
        "tau": cfg.tau,
        "num_pred_patches": pred.num_patches,
        "num_gt_patches": gt.num_patches,
        "patch_precision": prec,
        "patch_recall": rec,
        "patch_f1": f,
        "edge_precision": None,
        "edge_recall": None,
        "edge_f1": None,
    }
    pred_edges = PatchSet.edges_of(pred, cfg.edge_threshold)
    gt_edges = PatchSet.edges_of(gt, cfg.edge_threshold)
    if len(pred_edges) and len(gt_edges):
        e_prec, e_rec, e_f = _prf(pred_edges, gt_edges, cfg)
        report.update(edge_precision=e_prec, edge_recall=e_rec, edge_f1=e_f)
    else:
        logger.warning("edge metrics skipped: a cloud has no points with edge >= %g", cfg.edge_threshold)
    return report


def cad_report(
    model: BRepModel, gt: LabeledPointCloud, cfg: MetricConfig, *, seed: int = 0
) -> dict[str, Any]:
    """
    Chamfer and Hausdorff distances of model surfaces and edges to ground truth.

    Surfaces are compared with every ground-truth point, curves with the
    ground-truth edge points. Curve metrics are None when either side has
    no edges.

    Raises:
        MetricError: If the model has no faces or no surface sample is accepted
    """
    if not model.faces:
        raise MetricError(_ERR_EMPTY_MODEL)
    surface = sample_model_surfaces(model, cfg.surface_samples, seed=seed)
    if len(surface) == 0:
        raise MetricError(_ERR_EMPTY_MODEL)
    report: dict[str, Any] = {
        "num_faces": len(model.faces),
        "num_edges": len(model.edges),
        "num_corners": len(model.corners),
        "surface_chamfer": chamfer(surface, gt.points),
        "surface_hausdorff": hausdorff(surface, gt.points),
        "curve_chamfer": None,
        "curve_hausdorff": None,
    }
    gt_edges = gt.points[gt.edge_mask(cfg.edge_threshold)]
    if model.edges and len(gt_edges):
        curves = sample_model_edges(model, cfg.curve_samples)
        report.update(curve_chamfer=chamfer(curves, gt_edges), curve_hausdorff=hausdorff(curves, gt_edges))
    else:
        logger.warning("curve metrics skipped: no model edges or no ground-truth edge points")
    return report


def aggregate_reports(reports: Mapping[str, Mapping[str, Any]]) -> dict[str, Any]:
    """
    Per-model reports plus their mean under "aggregate".

    Numeric fields are averaged over the models that report them; None
    values are skipped.
    """
    totals: dict[str, list[float]] = {}
    for report in reports.values():
        for key, value in report.items():
            if isinstance(value, int | float) and not isinstance(value, bool):
                totals.setdefault(key, []).append(float(value))
    aggregate: dict[str, Any] = {key: float(np.mean(values)) for key, values in totals.items()}
    aggregate["num_models"] = len(reports)
    return {"models": {name: dict(r) for name, r in reports.items()}, "aggregate": aggregate}
