"""
Utility functions for brep_fitter.

Small numeric helpers shared by the geometry, fitting and rendering modules,
and the configuration error raised by every config dataclass.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]


class ConfigError(ValueError):
    """Exception raised when a configuration value violates its invariants."""


def require_positive(section: str, **values: float) -> None:
    """
    Validate that every given value is strictly positive.

    Args:
        section: Config section name used in the error message
        **values: Field name to value mapping

    Raises:
        ConfigError: If any value is not strictly positive
    """
    for name, value in values.items():
        if not value > 0:
            msg = f"{section}.{name} must be > 0, got {value!r}"
            raise ConfigError(msg)


def as_points(points: ArrayLike) -> FloatArray:
    """
    Convert input to a contiguous (N, 3) float64 array.

    Args:
        points: Anything numpy can turn into an (N, 3) array

    Returns:
        (N, 3) float64 array

    Raises:
        ValueError: If the input does not have shape (N, 3)
    """
    arr = np.ascontiguousarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.shape[0] == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        msg = f"expected an (N, 3) array, got shape {arr.shape}"
        raise ValueError(msg)
    return arr


def unit(vector: ArrayLike) -> FloatArray:
    """Return the vector scaled to unit length."""
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(v))
    if norm == 0.0 or not np.isfinite(norm):
        msg = "cannot normalize a zero or non-finite vector"
        raise ValueError(msg)
    return v / norm


def canonical_sign(vector: ArrayLike, tol: float = 0.0) -> FloatArray:
    """
    Flip a direction so its first nonzero component is non-negative.

    Args:
        vector: Direction vector
        tol: Components with absolute value <= tol count as zero

    Returns:
        The vector or its negation
    """
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    for component in v:
        if abs(component) > tol:
            return v if component > 0 else -v
    return v


def orthonormal_basis(normal: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """
    Build a right-handed basis (e1, e2) of the plane orthogonal to normal.

    e1 is the projection of the global +x axis onto the plane (or +y when
    the normal is parallel to x), e2 = normal x e1.

    Args:
        normal: Unit plane normal

    Returns:
        Tuple (e1, e2) of unit vectors
    """
    n = unit(normal)
    reference = np.array([1.0, 0.0, 0.0])
    projected = reference - (reference @ n) * n
    if np.linalg.norm(projected) < 1e-6:
        reference = np.array([0.0, 1.0, 0.0])
        projected = reference - (reference @ n) * n
    e1 = projected / np.linalg.norm(projected)
    e2 = np.cross(n, e1)
    return e1, e2


def row_norms(vectors: FloatArray) -> FloatArray:
    """Euclidean norm of every row."""
    return np.sqrt(np.einsum("ij,ij->i", vectors, vectors))


def lexicographic_order(points: FloatArray) -> IntArray:
    """Indices that sort rows by x, then y, then z."""
    if len(points) == 0:
        return np.empty(0, dtype=np.int64)
    return np.lexsort((points[:, 2], points[:, 1], points[:, 0])).astype(np.int64)
