"""
Flat Gaussian splats and their CPU reference renderer.

Provides functionality to:
- Represent 2D Gaussian splats with opacity, color, edge value and feature embedding
- Map orthographic pixel rays to splat-local coordinates
- Composite color, edge and feature maps front to back (differentiable, float64)
- Convert splats to a labeled point cloud for B-rep fitting
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import torch
from numpy.typing import ArrayLike
from scipy.cluster.hierarchy import fcluster, linkage

from brep_fitter.cloud import UNLABELED, LabeledPointCloud
from brep_fitter.utils import ConfigError, FloatArray, IntArray, require_positive

logger = logging.getLogger(__name__)

DTYPE = torch.float64
CHANNELS = ("color", "edge", "feature", "alpha")

_ERR_TANGENTS = "gaussian {index}: tangents must be orthonormal (|t_u.t_v| = {dot:.3g})"
_ERR_SCALES = "gaussian {index}: scales must be > 0"
_ERR_RANGE = "gaussian {index}: {name} must lie in [0, 1]"
_ERR_FRAME = "camera frame must be orthonormal"
_ERR_FEATURE_DIM = "all gaussians must share one feature dimension"


class SplatError(ValueError):
    """Exception raised for invalid splat scenes or loss inputs."""


@dataclass(frozen=True)
class SplatConfig:
    """
    Splat sampling and verification parameters.

    Attributes:
        elongation_threshold: Max scale ratio for emitting ellipse points (rho)
        merge_distance: Cosine distance below which features share a patch
        feature_dim: Feature dimension of generated scenes
        min_weight: Contributions with alpha * G below this are skipped
        gradient_seeds: Randomized scenes per gradient check
        gradient_gaussians: Gaussians per randomized scene
        image_size: Width and height of randomized gradient scenes
        fd_step: Central finite-difference step
        rel_tolerance: Accepted relative gradient error
        abs_tolerance: Accepted absolute gradient error near zero
    """

    elongation_threshold: float = 4.0
    merge_distance: float = 0.5
    feature_dim: int = 16
    min_weight: float = 1e-4
    gradient_seeds: int = 20
    gradient_gaussians: int = 5
    image_size: int = 16
    fd_step: float = 1e-4
    rel_tolerance: float = 1e-4
    abs_tolerance: float = 1e-8

    def __post_init__(self) -> None:
        require_positive(
            "splat",
            elongation_threshold=self.elongation_threshold,
            merge_distance=self.merge_distance,
            feature_dim=self.feature_dim,
            gradient_seeds=self.gradient_seeds,
            gradient_gaussians=self.gradient_gaussians,
            image_size=self.image_size,
            fd_step=self.fd_step,
            rel_tolerance=self.rel_tolerance,
            abs_tolerance=self.abs_tolerance,
        )
        if self.elongation_threshold < 1:
            msg = f"splat.elongation_threshold must be >= 1, got {self.elongation_threshold}"
            raise ConfigError(msg)
        if self.min_weight < 0:
            msg = f"splat.min_weight must be >= 0, got {self.min_weight}"
            raise ConfigError(msg)


def _vector(values: ArrayLike, size: int | None = None) -> FloatArray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if size is not None and arr.shape != (size,):
        msg = f"expected {size} values, got {arr.shape[0]}"
        raise SplatError(msg)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Gaussian2D:
    """
    Flat Gaussian splat.

    Attributes:
        center: Center p_k
        t_u: First unit tangent
        t_v: Second unit tangent (orthogonal to t_u)
        scales: (s_u, s_v) standard deviations along the tangents
        opacity: Alpha in [0, 1]
        color: RGB in [0, 1]^3
        edge: Edge value in [0, 1]
        feature: Feature embedding
    """

    center: FloatArray
    t_u: FloatArray
    t_v: FloatArray
    scales: FloatArray
    opacity: float
    color: FloatArray
    edge: float
    feature: FloatArray = field(default_factory=lambda: np.zeros(16))

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", _vector(self.center, 3))
        object.__setattr__(self, "t_u", _vector(self.t_u, 3))
        object.__setattr__(self, "t_v", _vector(self.t_v, 3))
        object.__setattr__(self, "scales", _vector(self.scales, 2))
        object.__setattr__(self, "color", _vector(self.color, 3))
        object.__setattr__(self, "feature", _vector(self.feature))
        object.__setattr__(self, "opacity", float(self.opacity))
        object.__setattr__(self, "edge", float(self.edge))

    def validate(self, index: int = 0) -> None:
        """
        Check the splat invariants.

        Raises:
            SplatError: On non-orthonormal tangents, non-positive scales or out-of-range values
        """
        dot = abs(float(self.t_u @ self.t_v))
        unit_err = max(abs(np.linalg.norm(self.t_u) - 1.0), abs(np.linalg.norm(self.t_v) - 1.0))
        if dot >= 1e-9 or unit_err > 1e-9:
            msg = _ERR_TANGENTS.format(index=index, dot=dot)
            raise SplatError(msg)
        if np.any(self.scales <= 0):
            raise SplatError(_ERR_SCALES.format(index=index))
        for name, value in (("opacity", self.opacity), ("edge", self.edge)):
            if not 0.0 <= value <= 1.0:
                raise SplatError(_ERR_RANGE.format(index=index, name=name))
        if np.any(self.color < 0) or np.any(self.color > 1):
            raise SplatError(_ERR_RANGE.format(index=index, name="color"))

    @property
    def normal(self) -> FloatArray:
        return np.cross(self.t_u, self.t_v)

    @property
    def elongation(self) -> float:
        return float(self.scales.max() / self.scales.min())


@dataclass(frozen=True, eq=False)
class Camera:
    """
    Orthographic camera.

    The ray of pixel (row i, column j) starts at
    origin + ((j + 0.5) - W/2) * pixel_size * right + (H/2 - (i + 0.5)) * pixel_size * up
    and travels along view.
    """

    origin: FloatArray
    right: FloatArray
    up: FloatArray
    view: FloatArray
    width: int
    height: int
    pixel_size: float

    def __post_init__(self) -> None:
        for name in ("origin", "right", "up", "view"):
            object.__setattr__(self, name, _vector(getattr(self, name), 3))
        frame = np.vstack([self.right, self.up, self.view])
        if not np.allclose(frame @ frame.T, np.eye(3), atol=1e-9):
            raise SplatError(_ERR_FRAME)
        require_positive("camera", width=self.width, height=self.height, pixel_size=self.pixel_size)

    @classmethod
    def looking_down(cls, size: int, *, height: float = 2.0) -> Camera:
        """Camera above the unit square looking along -z."""
        return cls(
            origin=np.array([0.5, 0.5, height]),
            right=np.array([1.0, 0.0, 0.0]),
            up=np.array([0.0, 1.0, 0.0]),
            view=np.array([0.0, 0.0, -1.0]),
            width=size,
            height=size,
            pixel_size=1.0 / size,
        )

    def ray_origin(self, row: int, col: int) -> FloatArray:
        """Start point of one pixel's ray."""
        dx = ((col + 0.5) - self.width / 2) * self.pixel_size
        dy = (self.height / 2 - (row + 0.5)) * self.pixel_size
        return self.origin + dx * self.right + dy * self.up

    def ray_origins(self) -> FloatArray:
        """(H*W, 3) ray starts in row-major pixel order."""
        rows, cols = np.meshgrid(np.arange(self.height), np.arange(self.width), indexing="ij")
        dx = ((cols.reshape(-1) + 0.5) - self.width / 2) * self.pixel_size
        dy = (self.height / 2 - (rows.reshape(-1) + 0.5)) * self.pixel_size
        return self.origin + np.outer(dx, self.right) + np.outer(dy, self.up)

    def pixel_of(self, point: ArrayLike) -> tuple[int, int]:
        """Pixel (row, column) whose ray passes closest to a point."""
        d = np.asarray(point, dtype=np.float64) - self.origin
        col = math.floor(float(d @ self.right) / self.pixel_size + self.width / 2)
        row = math.floor(self.height / 2 - float(d @ self.up) / self.pixel_size)
        return row, col


@dataclass(frozen=True, eq=False)
class GaussianScene:
    """Gaussians plus an optional camera."""

    gaussians: tuple[Gaussian2D, ...]
    camera: Camera | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "gaussians", tuple(self.gaussians))

    def validate(self) -> None:
        dims = {len(g.feature) for g in self.gaussians}
        if len(dims) > 1:
            raise SplatError(_ERR_FEATURE_DIM)
        for i, g in enumerate(self.gaussians):
            g.validate(i)


def gaussian_kernel(u: ArrayLike) -> float:
    """Standard 2D Gaussian exp(-(u^2 + v^2) / 2) at local coordinates u."""
    uv = np.asarray(u, dtype=np.float64).reshape(2)
    return math.exp(-0.5 * float(uv @ uv))


def pixel_local_coords(g: Gaussian2D, cam: Camera, pixel: tuple[int, int]) -> FloatArray | None:
    """
    Local splat coordinates where a pixel's ray meets the splat plane.

    Args:
        g: Gaussian
        cam: Camera
        pixel: (row, column)

    Returns:
        (u, v) in units of the splat scales, or None when the ray is parallel to the splat
    """
    denom = float(cam.view @ g.normal)
    if abs(denom) <= 1e-9:
        return None
    origin = cam.ray_origin(*pixel)
    s = float((g.center - origin) @ g.normal) / denom
    offset = origin + s * cam.view - g.center
    return np.array([offset @ g.t_u / g.scales[0], offset @ g.t_v / g.scales[1]])


def sort_front_to_back(gaussians: Sequence[Gaussian2D], cam: Camera) -> list[Gaussian2D]:
    """Gaussians ordered by depth along the view direction (stable)."""
    depth = [float((g.center - cam.origin) @ cam.view) for g in gaussians]
    order = sorted(range(len(gaussians)), key=lambda i: depth[i])
    return [gaussians[i] for i in order]


# ---------------------------------------------------------------------------
# Differentiable renderer
# ---------------------------------------------------------------------------


def _skew(w: torch.Tensor) -> torch.Tensor:
    zero = torch.zeros_like(w[..., 0])
    return torch.stack(
        [
            torch.stack([zero, -w[..., 2], w[..., 1]], dim=-1),
            torch.stack([w[..., 2], zero, -w[..., 0]], dim=-1),
            torch.stack([-w[..., 1], w[..., 0], zero], dim=-1),
        ],
        dim=-2,
    )


@dataclass
class SceneTensors:
    """
    Scene parameters as float64 tensors.

    Tangents are the base tangents rotated by exp([rotation]x), so the
    axis-angle vector rotation (zero at construction) carries their gradients.
    """

    center: torch.Tensor
    rotation: torch.Tensor
    base_u: torch.Tensor
    base_v: torch.Tensor
    scales: torch.Tensor
    opacity: torch.Tensor
    color: torch.Tensor
    edge: torch.Tensor
    feature: torch.Tensor

    PARAMETERS = ("center", "rotation", "scales", "opacity", "color", "edge", "feature")

    @classmethod
    def from_gaussians(cls, gaussians: Sequence[Gaussian2D]) -> SceneTensors:
        def stack(values: list[Any]) -> torch.Tensor:
            return torch.tensor(np.array(values, dtype=np.float64), dtype=DTYPE)

        n = len(gaussians)
        return cls(
            center=stack([g.center for g in gaussians]).reshape(n, 3),
            rotation=torch.zeros((n, 3), dtype=DTYPE),
            base_u=stack([g.t_u for g in gaussians]).reshape(n, 3),
            base_v=stack([g.t_v for g in gaussians]).reshape(n, 3),
            scales=stack([g.scales for g in gaussians]).reshape(n, 2),
            opacity=stack([g.opacity for g in gaussians]).reshape(n),
            color=stack([g.color for g in gaussians]).reshape(n, 3),
            edge=stack([g.edge for g in gaussians]).reshape(n),
            feature=stack([g.feature for g in gaussians]).reshape(n, -1),
        )

    def tangents(self) -> tuple[torch.Tensor, torch.Tensor]:
        R = torch.linalg.matrix_exp(_skew(self.rotation))
        t_u = torch.einsum("nij,nj->ni", R, self.base_u)
        t_v = torch.einsum("nij,nj->ni", R, self.base_v)
        return t_u, t_v

    def parameters(self) -> dict[str, torch.Tensor]:
        return {name: getattr(self, name) for name in self.PARAMETERS}

    def with_parameters(self, values: dict[str, torch.Tensor]) -> SceneTensors:
        merged = {**self.__dict__, **values}
        return SceneTensors(**merged)


def render_channels(
    scene: SceneTensors,
    cam: Camera,
    channels: Sequence[str] = CHANNELS,
    *,
    min_weight: float = 1e-4,
) -> dict[str, torch.Tensor]:
    """
    Composite Gaussians front to back into per-pixel maps.

    Gaussian i contributes with weight
    w_i = alpha_i G_i(u) prod_{j<i} (1 - alpha_j G_j(u)); contributions with
    alpha_i G_i < min_weight are skipped and do not attenuate later ones.
    The Gaussians must already be sorted front to back.

    Args:
        scene: Scene tensors (sorted)
        cam: Orthographic camera
        channels: Subset of "color", "edge", "feature", "alpha"
        min_weight: Skip threshold for alpha * G

    Returns:
        Maps of shape (H, W, C); "edge" and "alpha" are (H, W)
    """
    unknown = set(channels) - set(CHANNELS)
    if unknown:
        msg = f"unknown render channels: {sorted(unknown)}"
        raise SplatError(msg)
    H, W = cam.height, cam.width
    origins = torch.tensor(cam.ray_origins(), dtype=DTYPE)
    view = torch.tensor(cam.view, dtype=DTYPE)
    t_u, t_v = scene.tangents()
    normal = torch.cross(t_u, t_v, dim=-1)
    denom = normal @ view
    facing = denom.abs() > 1e-9
    safe = torch.where(facing, denom, torch.ones_like(denom))

    rel = scene.center[None, :, :] - origins[:, None, :]
    depth = torch.einsum("pnj,nj->pn", rel, normal) / safe[None, :]
    offset = origins[:, None, :] + depth[..., None] * view - scene.center[None, :, :]
    u = torch.einsum("pnj,nj->pn", offset, t_u) / scene.scales[:, 0]
    v = torch.einsum("pnj,nj->pn", offset, t_v) / scene.scales[:, 1]
    alpha = scene.opacity[None, :] * torch.exp(-0.5 * (u * u + v * v))
    active = facing[None, :] & (depth > 0)
    if min_weight > 0:
        active = active & (alpha >= min_weight)
    alpha = torch.where(active, alpha, torch.zeros_like(alpha))

    ones = torch.ones_like(alpha[:, :1])
    transmittance = torch.cumprod(torch.cat([ones, 1.0 - alpha[:, :-1]], dim=1), dim=1)
    weights = alpha * transmittance

    out: dict[str, torch.Tensor] = {}
    if "color" in channels:
        out["color"] = (weights @ scene.color).reshape(H, W, 3)
    if "edge" in channels:
        out["edge"] = (weights @ scene.edge).reshape(H, W)
    if "feature" in channels:
        out["feature"] = (weights @ scene.feature).reshape(H, W, -1)
    if "alpha" in channels:
        out["alpha"] = weights.sum(dim=1).reshape(H, W)
    return out


def render_scene(
    gaussians: Sequence[Gaussian2D], cam: Camera, *, min_weight: float = 1e-4
) -> dict[str, FloatArray]:
    """Sort, render every channel and return numpy maps."""
    ordered = sort_front_to_back(gaussians, cam)
    with torch.no_grad():
        maps = render_channels(SceneTensors.from_gaussians(ordered), cam, min_weight=min_weight)
    return {name: tensor.numpy() for name, tensor in maps.items()}


# ---------------------------------------------------------------------------
# Splats to points
# ---------------------------------------------------------------------------


def assign_feature_patches(features: ArrayLike, merge_distance: float = 0.5) -> IntArray:
    """
    Patch labels from single-linkage merging of features under cosine distance.

    Features closer than merge_distance share a label; zero features stay
    UNLABELED. Labels are numbered by first occurrence.

    Args:
        features: (N, d) feature vectors
        merge_distance: Strict merge threshold on cosine distance

    Returns:
        (N,) labels
    """
    F = np.asarray(features, dtype=np.float64)
    labels = np.full(len(F), UNLABELED, dtype=np.int64)
    valid = np.flatnonzero(np.linalg.norm(F, axis=1) > 0) if len(F) else np.empty(0, dtype=np.int64)
    if len(valid) == 0:
        return labels
    if len(valid) == 1:
        labels[valid] = 0
        return labels
    tree = linkage(F[valid], method="single", metric="cosine")
    raw = fcluster(tree, t=np.nextafter(merge_distance, 0.0), criterion="distance")
    mapping: dict[int, int] = {}
    for idx, cluster in zip(valid, raw, strict=True):
        labels[idx] = mapping.setdefault(int(cluster), len(mapping))
    return labels


def sample_gaussians_to_points(
    gaussians: Sequence[Gaussian2D],
    elongation_threshold: float = 4.0,
    *,
    merge_distance: float = 0.5,
) -> LabeledPointCloud:
    """
    Convert splats to a labeled point cloud.

    Every Gaussian emits its center; Gaussians with elongation <= rho also
    emit p +/- s_u t_u and p +/- s_v t_v. Points carry the Gaussian's edge
    value, feature, splat normal and the patch label of its feature cluster.

    Args:
        gaussians: Splats
        elongation_threshold: rho
        merge_distance: Cosine distance threshold of the feature merge

    Returns:
        LabeledPointCloud with features
    """
    if not gaussians:
        return LabeledPointCloud.from_points(np.empty((0, 3)))
    gaussian_labels = assign_feature_patches([g.feature for g in gaussians], merge_distance)
    points, labels, edges, normals, features = [], [], [], [], []
    for g, label in zip(gaussians, gaussian_labels, strict=True):
        emitted = [g.center]
        if g.elongation <= elongation_threshold:
            su, sv = g.scales
            emitted += [
                g.center + su * g.t_u,
                g.center - su * g.t_u,
                g.center + sv * g.t_v,
                g.center - sv * g.t_v,
            ]
        n = g.normal / np.linalg.norm(g.normal)
        for p in emitted:
            points.append(p)
            labels.append(label)
            edges.append(min(max(g.edge, 0.0), 1.0))
            normals.append(n)
            features.append(g.feature)
    return LabeledPointCloud(
        points=np.array(points),
        patch_id=np.array(labels),
        edge_flag=np.array(edges),
        normals=np.array(normals),
        features=np.array(features),
    )
