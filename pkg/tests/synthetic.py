"""
Synthetic labeled clouds with known B-rep answers.

Each generator samples face points with patch labels and edge points
(edge_flag 1) split between the two faces that meet at the edge.
"""

from __future__ import annotations

import itertools

import numpy as np

from brep_fitter.cloud import LabeledPointCloud

CUBE_CORNERS = np.array(list(itertools.product((0.0, 1.0), repeat=3)))


def _cloud(parts: list[tuple[np.ndarray, int, float]], noise: float, rng: np.random.Generator) -> LabeledPointCloud:
    points = np.vstack([p for p, _, _ in parts])
    patch_id = np.concatenate([np.full(len(p), label) for p, label, _ in parts])
    edge = np.concatenate([np.full(len(p), flag) for p, _, flag in parts])
    if noise > 0:
        points = points + rng.normal(scale=noise, size=points.shape)
    return LabeledPointCloud(points=points, patch_id=patch_id, edge_flag=edge)


def cube_cloud(
    *,
    face_points: int = 600,
    edge_points: int = 60,
    noise: float = 0.003,
    seed: int = 0,
    scale: float = 1.0,
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0),
) -> LabeledPointCloud:
    """Unit cube with patch 2a+s on the face x_a = s."""
    rng = np.random.default_rng(seed)
    parts: list[tuple[np.ndarray, int, float]] = []
    for axis, side in itertools.product(range(3), (0, 1)):
        pts = rng.uniform(0.0, 1.0, size=(face_points, 3))
        pts[:, axis] = side
        parts.append((pts, 2 * axis + side, 0.0))
    for axis in range(3):
        b, c = (k for k in range(3) if k != axis)
        for vb, vc in itertools.product((0, 1), repeat=2):
            pts = np.zeros((edge_points, 3))
            pts[:, axis] = rng.uniform(0.0, 1.0, size=edge_points)
            pts[:, b], pts[:, c] = vb, vc
            half = edge_points // 2
            parts.append((pts[:half], 2 * b + vb, 1.0))
            parts.append((pts[half:], 2 * c + vc, 1.0))
    cloud = _cloud(parts, noise, rng)
    if scale != 1.0 or any(offset):
        cloud = LabeledPointCloud(
            points=cloud.points * scale + np.asarray(offset),
            patch_id=cloud.patch_id,
            edge_flag=cloud.edge_flag,
        )
    return cloud


def capped_cylinder_cloud(
    *,
    radius: float = 0.3,
    z_range: tuple[float, float] = (0.2, 0.8),
    side_points: int = 1500,
    cap_points: int = 600,
    edge_points: int = 120,
    noise: float = 0.002,
    seed: int = 0,
) -> LabeledPointCloud:
    """Cylinder of axis x = y = 0.5 (patch 0) closed by two disc caps (patches 1, 2)."""
    rng = np.random.default_rng(seed)
    center = np.array([0.5, 0.5])
    z0, z1 = z_range
    theta = rng.uniform(0.0, 2 * np.pi, side_points)
    side = np.column_stack(
        [center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta), rng.uniform(z0, z1, side_points)]
    )
    parts: list[tuple[np.ndarray, int, float]] = [(side, 0, 0.0)]
    for label, z in ((1, z0), (2, z1)):
        r = radius * np.sqrt(rng.uniform(0.0, 1.0, cap_points))
        phi = rng.uniform(0.0, 2 * np.pi, cap_points)
        cap = np.column_stack([center[0] + r * np.cos(phi), center[1] + r * np.sin(phi), np.full(cap_points, z)])
        parts.append((cap, label, 0.0))
        phi = rng.uniform(0.0, 2 * np.pi, edge_points)
        rim = np.column_stack(
            [center[0] + radius * np.cos(phi), center[1] + radius * np.sin(phi), np.full(edge_points, z)]
        )
        half = edge_points // 2
        parts.append((rim[:half], 0, 1.0))
        parts.append((rim[half:], label, 1.0))
    return _cloud(parts, noise, rng)


def plate_with_hole_cloud(
    *,
    thickness: float = 0.2,
    hole_radius: float = 0.2,
    face_points: int = 800,
    edge_points: int = 60,
    noise: float = 0.002,
    seed: int = 0,
) -> LabeledPointCloud:
    """
    Square slab [0, 1]^2 x [0, thickness] with a vertical hole through (0.5, 0.5).

    Patches: 0 bottom, 1 top, 2..5 the sides x=0, x=1, y=0, y=1, 6 the hole.
    """
    rng = np.random.default_rng(seed)
    center = np.array([0.5, 0.5])
    parts: list[tuple[np.ndarray, int, float]] = []

    def outside_hole(n: int, z: float) -> np.ndarray:
        pts = rng.uniform(0.0, 1.0, size=(3 * n, 2))
        pts = pts[np.linalg.norm(pts - center, axis=1) > hole_radius][:n]
        return np.column_stack([pts, np.full(len(pts), z)])

    parts.append((outside_hole(face_points, 0.0), 0, 0.0))
    parts.append((outside_hole(face_points, thickness), 1, 0.0))
    for k, (axis, side) in enumerate(itertools.product((0, 1), (0, 1))):
        pts = np.column_stack(
            [rng.uniform(0.0, 1.0, face_points // 2), rng.uniform(0.0, 1.0, face_points // 2), rng.uniform(0.0, thickness, face_points // 2)]
        )
        pts[:, axis] = side
        parts.append((pts, 2 + k, 0.0))
    theta = rng.uniform(0.0, 2 * np.pi, face_points)
    wall = np.column_stack(
        [center[0] + hole_radius * np.cos(theta), center[1] + hole_radius * np.sin(theta), rng.uniform(0.0, thickness, face_points)]
    )
    parts.append((wall, 6, 0.0))

    # outer edges: 4 bottom, 4 top, 4 vertical
    for axis, side in itertools.product((0, 1), (0, 1)):
        other = 1 - axis
        side_label = 2 + 2 * axis + side
        for z, cap_label in ((0.0, 0), (thickness, 1)):
            pts = np.zeros((edge_points, 3))
            pts[:, axis] = side
            pts[:, other] = rng.uniform(0.0, 1.0, edge_points)
            pts[:, 2] = z
            half = edge_points // 2
            parts.append((pts[:half], side_label, 1.0))
            parts.append((pts[half:], cap_label, 1.0))
    for x, y in itertools.product((0, 1), repeat=2):
        pts = np.column_stack(
            [np.full(edge_points // 2, x), np.full(edge_points // 2, y), rng.uniform(0.0, thickness, edge_points // 2)]
        )
        parts.append((pts[: len(pts) // 2], 2 + x, 1.0))
        parts.append((pts[len(pts) // 2 :], 4 + y, 1.0))
    # hole rims
    for z, cap_label in ((0.0, 0), (thickness, 1)):
        phi = rng.uniform(0.0, 2 * np.pi, 2 * edge_points)
        rim = np.column_stack(
            [center[0] + hole_radius * np.cos(phi), center[1] + hole_radius * np.sin(phi), np.full(2 * edge_points, z)]
        )
        parts.append((rim[:edge_points], 6, 1.0))
        parts.append((rim[edge_points:], cap_label, 1.0))
    return _cloud(parts, noise, rng)


def plane_points(normal: np.ndarray, offset: float, n: int, rng: np.random.Generator, noise: float) -> np.ndarray:
    """Points of a plane patch around the projection of (0.5, 0.5, 0.5)."""
    normal = normal / np.linalg.norm(normal)
    base = np.full(3, 0.5)
    base = base - (base @ normal - offset) * normal
    helper = np.array([1.0, 0.0, 0.0]) if abs(normal[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    uv = rng.uniform(-0.4, 0.4, size=(n, 2))
    pts = base + uv[:, :1] * e1 + uv[:, 1:] * e2
    return pts + rng.normal(scale=noise, size=pts.shape)


def cylinder_points(
    axis_point: np.ndarray,
    axis: np.ndarray,
    radius: float,
    n: int,
    rng: np.random.Generator,
    noise: float,
    *,
    height: float = 0.6,
    arc: float = 2 * np.pi,
) -> np.ndarray:
    """Points of a cylinder patch covering an angular arc."""
    axis = axis / np.linalg.norm(axis)
    helper = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    theta = rng.uniform(0.0, arc, n)
    h = rng.uniform(-height / 2, height / 2, n)
    pts = axis_point + h[:, None] * axis + radius * (np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2)
    return pts + rng.normal(scale=noise, size=pts.shape)


def sphere_points(
    center: np.ndarray, radius: float, n: int, rng: np.random.Generator, noise: float
) -> np.ndarray:
    """Points spread over a sphere."""
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = center + radius * dirs
    return pts + rng.normal(scale=noise, size=pts.shape)
