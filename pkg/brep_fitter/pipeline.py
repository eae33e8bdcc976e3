"""
Staged B-rep fitting pipeline.

Provides functionality to:
- Normalize a labeled cloud and estimate per-patch normals
- Fit primitives per patch and intersect neighboring patches in worker threads
- Extract segments, cluster corners and assemble the B-rep model
- Map the model back into the input's coordinates
"""

from __future__ import annotations

import asyncio
import logging
from collections import Counter
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import Any, TypeVar

import numpy as np

from brep_fitter.assembly import AssemblyResult, assemble_brep
from brep_fitter.cloud import UNLABELED, LabeledPointCloud, Similarity, estimate_normals, normalize_cloud
from brep_fitter.config import PipelineConfig
from brep_fitter.fitting import FitReport, FittingError, PrimitiveFit, fit_patch
from brep_fitter.geometry import BRepModel, CurveSegment
from brep_fitter.intersection import (
    CoincidentPrimitivesError,
    candidate_pairs,
    cluster_corners,
    corner_candidates,
    extract_segments,
    intersect_primitives,
    project_edge_points,
)
from brep_fitter.tessellation import TriangleMesh, tessellate
from brep_fitter.utils import FloatArray

logger = logging.getLogger(__name__)

_ERR_NO_PATCHES = "no labeled patches"

T = TypeVar("T")


class StageError(Exception):
    """
    Exception raised when a pipeline stage fails.

    Attributes:
        stage: Name of the failing stage
        cause: The original exception
    """

    def __init__(self, stage: str, cause: Exception) -> None:
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


@contextmanager
def _stage(name: str) -> Iterator[None]:
    logger.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class PairResult:
    """Curves and trimmed segments of one patch pair."""

    pair: tuple[int, int]
    candidates: int = 0
    segments: list[CurveSegment] = field(default_factory=list)
    coincident: bool = False


@dataclass
class PipelineResult:
    """
    Everything the fit command reports and writes.

    Attributes:
        model: Model in the input cloud's coordinates
        normalized_model: Model in the unit frame it was fitted in
        similarity: Transform from input coordinates to the unit frame
        fit_report: Per-patch fits and failures
        assembly: Assembly result with the per-face report
        pairs: Results of every intersected patch pair
        corner_candidates: Number of corner candidates before clustering
    """

    model: BRepModel
    normalized_model: BRepModel
    similarity: Similarity
    fit_report: FitReport
    assembly: AssemblyResult
    pairs: list[PairResult] = field(default_factory=list)
    corner_candidates: int = 0

    def summary(self) -> dict[str, Any]:
        """Per-stage counts in a flat dictionary."""
        kinds = Counter(fit.primitive.kind.value for fit in self.fit_report.fits.values())
        return {
            "patches": len(self.fit_report.fits) + len(self.fit_report.failures),
            "fitted": len(self.fit_report.fits),
            "failed": len(self.fit_report.failures),
            "kinds": dict(sorted(kinds.items())),
            "pairs": len(self.pairs),
            "candidate_curves": sum(p.candidates for p in self.pairs),
            "segments": sum(len(p.segments) for p in self.pairs),
            "corner_candidates": self.corner_candidates,
            "faces": len(self.model.faces),
            "edges": len(self.model.edges),
            "corners": len(self.model.corners),
            "watertight": self.model.is_watertight(),
            "flagged_faces": self.assembly.flagged_faces,
        }

    def preview(self, density: int = 32, samples_per_edge: int = 64) -> TriangleMesh:
        """Tessellate in the unit frame, then map the mesh to input coordinates."""
        mesh = tessellate(self.normalized_model, density, samples_per_edge=samples_per_edge)
        back = self.similarity.inverse()
        return replace(
            mesh,
            vertices=back.apply(mesh.vertices) if len(mesh.vertices) else mesh.vertices,
            polylines=tuple(back.apply(p) for p in mesh.polylines),
        )


async def _bounded(semaphore: asyncio.Semaphore, fn: Callable[..., T], *args: Any) -> T:
    async with semaphore:
        return await asyncio.to_thread(fn, *args)


def _fit_one(cloud: LabeledPointCloud, patch_id: int, cfg: PipelineConfig) -> PrimitiveFit | str:
    try:
        return fit_patch(cloud, patch_id, cfg.ransac)
    except FittingError as e:
        return str(e)


def _pair_edge_points(cloud: LabeledPointCloud, pair: tuple[int, int], threshold: float) -> FloatArray:
    """
    Edge points labeled with either patch of the pair, or unlabeled.

    Unlabeled edge points are offered to every pair; the projection
    threshold keeps the ones far from the pair's curves out.
    """
    own = np.isin(cloud.patch_id, pair) | (cloud.patch_id == UNLABELED)
    return cloud.points[cloud.edge_mask(threshold) & own]


def _intersect_pair(
    cloud: LabeledPointCloud,
    fits: dict[int, PrimitiveFit],
    pair: tuple[int, int],
    cfg: PipelineConfig,
) -> PairResult:
    edge_points = _pair_edge_points(cloud, pair, cfg.metrics.edge_threshold)
    a, b = (fits[p].primitive for p in pair)
    result = PairResult(pair)
    try:
        curves = intersect_primitives(
            a,
            b,
            source_faces=pair,
            seeds=edge_points if len(edge_points) else None,
            eps=cfg.ransac.inlier_threshold,
            cfg=cfg.trim,
        )
    except CoincidentPrimitivesError as e:
        logger.warning("patches %d and %d skipped: %s", pair[0], pair[1], e)
        result.coincident = True
        return result
    result.candidates = len(curves)
    for curve in curves:
        projections = project_edge_points(curve, edge_points, cfg.trim)
        result.segments.extend(extract_segments(projections, curve, cfg.trim))
    logger.debug(
        "pair %s: %d curve(s), %d segment(s)", pair, result.candidates, len(result.segments)
    )
    return result


async def fit_cloud(cloud: LabeledPointCloud, cfg: PipelineConfig | None = None) -> PipelineResult:
    """
    Run the fit pipeline on a labeled cloud.

    Stages: normalize, normals, fitting, intersection, corners, assembly.
    Per-patch fitting and per-pair intersection run in worker threads
    bounded by cfg.threads; results are gathered in input order so the
    model never depends on the thread count.

    Args:
        cloud: Labeled cloud in any coordinates
        cfg: Pipeline configuration

    Returns:
        PipelineResult with the model in the cloud's coordinates

    Raises:
        StageError: Wrapping the failure of any stage
    """
    cfg = cfg or PipelineConfig()
    semaphore = asyncio.Semaphore(cfg.threads)

    with _stage("normalize"):
        unit_cloud, similarity = normalize_cloud(cloud)

    with _stage("normals"):
        if unit_cloud.normals is None:
            unit_cloud = estimate_normals(unit_cloud, cfg.normals.k, per_patch=cfg.normals.per_patch)

    with _stage("fitting"):
        labels = unit_cloud.labels
        if not labels:
            raise FittingError(_ERR_NO_PATCHES)
        outcomes = await asyncio.gather(
            *(_bounded(semaphore, _fit_one, unit_cloud, pid, cfg) for pid in labels)
        )
        fit_report = FitReport()
        for pid, outcome in zip(labels, outcomes, strict=True):
            if isinstance(outcome, str):
                logger.warning("patch %d excluded: %s", pid, outcome)
                fit_report.failures[pid] = outcome
            else:
                fit_report.fits[pid] = outcome
        logger.info("fitted %d of %d patches", len(fit_report.fits), len(labels))

    with _stage("intersection"):
        pairs = candidate_pairs(fit_report.fits, unit_cloud.points, cfg.ransac.inlier_threshold)
        pair_results = list(
            await asyncio.gather(
                *(
                    _bounded(semaphore, _intersect_pair, unit_cloud, fit_report.fits, pair, cfg)
                    for pair in pairs
                )
            )
        )
        segments = [seg for result in pair_results for seg in result.segments]
        logger.info("%d pair(s), %d segment(s)", len(pairs), len(segments))

    with _stage("corners"):
        candidates = corner_candidates(fit_report.fits, segments, cfg.trim)
        corners = cluster_corners(candidates, cfg.trim)
        logger.info("%d corner candidate(s) -> %d corner(s)", len(candidates), len(corners))

    with _stage("assembly"):
        assembly = await asyncio.to_thread(
            assemble_brep, unit_cloud, fit_report.fits, segments, corners, cfg.assembly
        )

    return PipelineResult(
        model=assembly.model.transformed(similarity.inverse()),
        normalized_model=assembly.model,
        similarity=similarity,
        fit_report=fit_report,
        assembly=assembly,
        pairs=pair_results,
        corner_candidates=len(candidates),
    )
