"""
Labeled point clouds for B-rep fitting.

Provides functionality to:
- Hold points with optional normals, per-point patch labels and edge flags
- Normalize a cloud into the unit box with an isotropic similarity transform
- Estimate normals from k-nearest-neighbor covariance
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import cKDTree

from brep_fitter.utils import ConfigError, FloatArray, IntArray, as_points, canonical_sign

logger = logging.getLogger(__name__)

UNLABELED = -1
"""Patch label for points the segmentation left unassigned."""

_ERR_EMPTY = "empty input"
_ERR_SHAPE = "{name} has {got} rows, expected {expected}"
_ERR_TOO_FEW = "estimate_normals needs at least k+1 = {needed} points, got {got}"
_ERR_NORMALS = "normals must have unit length (max deviation {deviation:.3g})"
_ERR_EDGE_RANGE = "edge_flag values must lie in [0, 1]"
_ERR_LABEL = "patch_id values must be >= 0 or UNLABELED (-1)"


class CloudError(ValueError):
    """Exception raised for invalid point cloud input."""


def _frozen(array: np.ndarray) -> np.ndarray:
    copy = np.array(array, copy=True)
    copy.setflags(write=False)
    return copy


@dataclass(frozen=True, eq=False)
class Similarity:
    """
    Isotropic similarity x' = scale * x + translation.

    Attributes:
        scale: Positive uniform scale factor
        translation: 3-vector added after scaling
    """

    scale: float = 1.0
    translation: FloatArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if not self.scale > 0:
            msg = f"similarity scale must be positive, got {self.scale}"
            raise CloudError(msg)
        object.__setattr__(
            self, "translation", _frozen(np.asarray(self.translation, dtype=np.float64))
        )

    def apply(self, points: ArrayLike) -> FloatArray:
        """Map points into the target frame."""
        return np.asarray(points, dtype=np.float64) * self.scale + self.translation

    def apply_length(self, length: float) -> float:
        """Map a length (radius, distance) into the target frame."""
        return float(length * self.scale)

    def inverse(self) -> Similarity:
        """Return the inverse transform."""
        return Similarity(1.0 / self.scale, -self.translation / self.scale)

    def compose(self, other: Similarity) -> Similarity:
        """Return the transform applying other first, then self."""
        return Similarity(self.scale * other.scale, self.scale * other.translation + self.translation)

    def is_identity(self, tol: float = 1e-15) -> bool:
        """True when the transform leaves points unchanged."""
        return abs(self.scale - 1.0) <= tol and bool(np.all(np.abs(self.translation) <= tol))


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """
    Point cloud with patch labels and edge flags.

    Attributes:
        points: (N, 3) coordinates
        patch_id: (N,) integer patch labels, UNLABELED (-1) for unassigned points
        edge_flag: (N,) edge probability in [0, 1]
        normals: Optional (N, 3) unit normals
        features: Optional (N, d) feature embeddings carried over from Gaussians
    """

    points: FloatArray
    patch_id: IntArray
    edge_flag: FloatArray
    normals: FloatArray | None = None
    features: FloatArray | None = None

    def __post_init__(self) -> None:
        points = as_points(self.points) if len(self.points) else np.empty((0, 3))
        n = len(points)
        patch_id = np.asarray(self.patch_id, dtype=np.int64).reshape(-1)
        edge_flag = np.asarray(self.edge_flag, dtype=np.float64).reshape(-1)
        for name, arr in (("patch_id", patch_id), ("edge_flag", edge_flag)):
            if len(arr) != n:
                msg = _ERR_SHAPE.format(name=name, got=len(arr), expected=n)
                raise CloudError(msg)
        if np.any(patch_id < UNLABELED):
            raise CloudError(_ERR_LABEL)
        if np.any((edge_flag < 0.0) | (edge_flag > 1.0)):
            raise CloudError(_ERR_EDGE_RANGE)
        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "patch_id", _frozen(patch_id))
        object.__setattr__(self, "edge_flag", _frozen(edge_flag))
        if self.normals is not None:
            normals = as_points(self.normals) if n else np.empty((0, 3))
            if len(normals) != n:
                msg = _ERR_SHAPE.format(name="normals", got=len(normals), expected=n)
                raise CloudError(msg)
            deviation = float(np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0))) if n else 0.0
            if deviation > 1e-6:
                msg = _ERR_NORMALS.format(deviation=deviation)
                raise CloudError(msg)
            object.__setattr__(self, "normals", _frozen(normals))
        if self.features is not None:
            features = np.asarray(self.features, dtype=np.float64)
            if features.ndim != 2 or len(features) != n:
                msg = _ERR_SHAPE.format(name="features", got=len(features), expected=n)
                raise CloudError(msg)
            object.__setattr__(self, "features", _frozen(features))

    @classmethod
    def from_points(
        cls,
        points: ArrayLike,
        patch_id: ArrayLike | None = None,
        edge_flag: ArrayLike | None = None,
        normals: ArrayLike | None = None,
    ) -> LabeledPointCloud:
        """
        Build a cloud, filling missing labels with UNLABELED and edges with 0.

        Args:
            points: (N, 3) coordinates
            patch_id: Optional per-point labels
            edge_flag: Optional per-point edge values
            normals: Optional per-point unit normals

        Returns:
            New LabeledPointCloud
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = len(pts)
        return cls(
            points=pts,
            patch_id=np.full(n, UNLABELED) if patch_id is None else np.asarray(patch_id),
            edge_flag=np.zeros(n) if edge_flag is None else np.asarray(edge_flag),
            normals=None if normals is None else np.asarray(normals, dtype=np.float64),
        )

    def __len__(self) -> int:
        return len(self.points)

    @property
    def labels(self) -> list[int]:
        """Sorted distinct patch labels, UNLABELED excluded."""
        return [int(x) for x in np.unique(self.patch_id) if x != UNLABELED]

    @property
    def num_patches(self) -> int:
        """Number of distinct labeled patches."""
        return len(self.labels)

    def patch_indices(self) -> dict[int, IntArray]:
        """Map each patch label to the sorted indices of its points."""
        return {label: np.flatnonzero(self.patch_id == label) for label in self.labels}

    def edge_mask(self, threshold: float = 0.5) -> np.ndarray:
        """Boolean mask of points whose edge flag is >= threshold."""
        return self.edge_flag >= threshold

    def with_normals(self, normals: ArrayLike) -> LabeledPointCloud:
        """Return a copy carrying the given normals."""
        return replace(self, normals=np.asarray(normals, dtype=np.float64))

    def transformed(self, similarity: Similarity) -> LabeledPointCloud:
        """Return a copy with points mapped through the similarity."""
        return replace(self, points=similarity.apply(self.points))

    def compact_labels(self) -> LabeledPointCloud:
        """
        Relabel patches to the contiguous range 0..K-1.

        Labels keep their relative order; UNLABELED points stay unlabeled.

        Returns:
            Cloud with compacted patch_id
        """
        new_ids = np.full(len(self), UNLABELED, dtype=np.int64)
        for new, old in enumerate(self.labels):
            new_ids[self.patch_id == old] = new
        return replace(self, patch_id=new_ids)


def normalize_cloud(cloud: LabeledPointCloud) -> tuple[LabeledPointCloud, Similarity]:
    """
    Map a cloud into the unit box using its longest bounding-box axis.

    The bounding-box minimum moves to the origin and the longest axis is
    scaled to length 1; other axes keep their proportions.

    Args:
        cloud: Input cloud

    Returns:
        Tuple of (normalized cloud, applied similarity)

    Raises:
        CloudError: If the cloud is empty
    """
    if len(cloud) == 0:
        raise CloudError(_ERR_EMPTY)
    lo = cloud.points.min(axis=0)
    extent = float(np.max(cloud.points.max(axis=0) - lo))
    if extent <= 0:
        extent = 1.0
    similarity = Similarity(1.0 / extent, -lo / extent)
    if similarity.is_identity():
        return cloud, Similarity()
    # (p - lo) / extent keeps the box exactly [0, 1] on the longest axis
    return replace(cloud, points=(cloud.points - lo) / extent), similarity


def estimate_normals(
    cloud: LabeledPointCloud,
    k: int = 16,
    *,
    per_patch: bool = False,
) -> LabeledPointCloud:
    """
    Estimate unit normals from k-nearest-neighbor covariance.

    Each normal is the eigenvector of the smallest covariance eigenvalue of
    the point's neighborhood, oriented away from the neighborhood centroid.
    Normals whose orientation is ambiguous fall back to the canonical sign
    (first nonzero component positive).

    Args:
        cloud: Input cloud
        k: Neighbor count (excluding the point itself)
        per_patch: Restrict neighborhoods to the point's own patch

    Returns:
        Cloud carrying the estimated normals

    Raises:
        ConfigError: If k < 3
        CloudError: If the cloud has fewer than k+1 points
    """
    if k < 3:
        msg = f"normals.k must be >= 3, got {k}"
        raise ConfigError(msg)
    if len(cloud) < k + 1:
        msg = _ERR_TOO_FEW.format(needed=k + 1, got=len(cloud))
        raise CloudError(msg)

    normals = np.zeros_like(cloud.points)
    groups: list[IntArray] = []
    if per_patch:
        groups.extend(cloud.patch_indices().values())
        unlabeled = np.flatnonzero(cloud.patch_id == UNLABELED)
        if len(unlabeled):
            groups.append(unlabeled)
    else:
        groups.append(np.arange(len(cloud)))

    degenerate = 0
    for indices in groups:
        own = cloud.points[indices]
        # small patches borrow neighbors from the whole cloud
        source = own if len(own) >= k + 1 else cloud.points
        tree = cKDTree(source)
        _, neighbor_idx = tree.query(own, k=k + 1)
        neighborhoods = source[neighbor_idx]
        centroids = neighborhoods.mean(axis=1)
        centered = neighborhoods - centroids[:, None, :]
        covariances = np.einsum("nki,nkj->nij", centered, centered) / (k + 1)
        eigenvalues, eigenvectors = np.linalg.eigh(covariances)
        group_normals = eigenvectors[:, :, 0]
        low_rank = eigenvalues[:, 1] <= 1e-12 * np.maximum(eigenvalues[:, 2], 1e-300)
        degenerate += int(np.count_nonzero(low_rank))

        outward = np.einsum("ij,ij->i", group_normals, own - centroids)
        scale = np.linalg.norm(own - centroids, axis=1)
        ambiguous = np.abs(outward) <= 1e-9 * np.maximum(scale, 1e-12)
        flip = (outward < 0) & ~ambiguous
        group_normals[flip] *= -1.0
        for row in np.flatnonzero(ambiguous):
            group_normals[row] = canonical_sign(group_normals[row], tol=1e-12)
        normals[indices] = group_normals / np.linalg.norm(group_normals, axis=1, keepdims=True)

    if degenerate:
        logger.warning(
            "%d of %d normals come from rank-deficient neighborhoods (low confidence)",
            degenerate,
            len(cloud),
        )
    return cloud.with_normals(normals)
