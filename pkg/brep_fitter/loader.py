"""
Readers for point clouds, B-rep documents and Gaussian scenes.

Provides functionality to:
- Read labeled point clouds from PLY (ASCII or binary) or XYZL text
- Read B-rep documents written by the exporter
- Read Gaussian scene text files with an optional camera record
"""

from __future__ import annotations

import io
import json
import logging
import math
from pathlib import Path
from typing import IO, Any

import numpy as np
from plyfile import PlyData, PlyElementParseError, PlyHeaderParseError

from brep_fitter.cloud import UNLABELED, CloudError, LabeledPointCloud
from brep_fitter.geometry import BRepModel, CurveSegment, Face, GeometryError
from brep_fitter.splat import Camera, Gaussian2D, GaussianScene, SplatError

logger = logging.getLogger(__name__)

BREP_FORMAT = "brep-fitter/1"

_GAUSSIAN_FIXED = 16
_CAMERA_VALUES = 15


class ParseError(ValueError):
    """
    Exception raised for malformed input files.

    Attributes:
        source: File name or "<stream>"
        row: One-based text row or zero-based PLY vertex index, when known
    """

    def __init__(self, message: str, *, source: str = "<stream>", row: int | None = None) -> None:
        self.source = source
        self.row = row
        where = f"{source}, row {row}" if row is not None else source
        super().__init__(f"{where}: {message}")


def _source_name(source: str | Path | IO[bytes]) -> str:
    if isinstance(source, str | Path):
        return str(source)
    return str(getattr(source, "name", "<stream>"))


def _read_bytes(source: str | Path | IO[bytes]) -> bytes:
    if isinstance(source, str | Path):
        return Path(source).read_bytes()
    return source.read()


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


def read_cloud(source: str | Path | IO[bytes]) -> LabeledPointCloud:
    """
    Read a labeled point cloud.

    PLY input (detected by its magic line) reads vertex properties x, y, z,
    optional nx, ny, nz, patch_id and edge. Anything else is read as XYZL
    text with rows "x y z patch_id edge" or "x y z nx ny nz patch_id edge";
    blank lines and lines starting with # are ignored.

    Args:
        source: Path or binary stream

    Returns:
        LabeledPointCloud

    Raises:
        ParseError: On malformed headers, inconsistent counts or non-finite values
    """
    name = _source_name(source)
    data = _read_bytes(source)
    if data.startswith(b"ply"):
        return _read_ply(data, name)
    return _read_xyzl(data, name)


def _first_bad_row(*columns: np.ndarray) -> int | None:
    bad = np.zeros(len(columns[0]), dtype=bool)
    for col in columns:
        bad |= ~np.isfinite(col)
    rows = np.flatnonzero(bad)
    return int(rows[0]) if len(rows) else None


def _read_ply(data: bytes, name: str) -> LabeledPointCloud:
    try:
        ply = PlyData.read(io.BytesIO(data))
    except PlyHeaderParseError as e:
        msg = f"malformed PLY header: {e.message}"
        raise ParseError(msg, source=name, row=e.line) from e
    except PlyElementParseError as e:
        msg = f"malformed PLY data: {e.message}"
        raise ParseError(msg, source=name, row=e.row) from e
    except (ValueError, EOFError) as e:
        msg = f"malformed PLY file: {e}"
        raise ParseError(msg, source=name) from e
    if "vertex" not in ply:
        msg = "PLY file has no vertex element"
        raise ParseError(msg, source=name)
    vertex = ply["vertex"].data
    fields = set(vertex.dtype.names or ())
    missing = {"x", "y", "z"} - fields
    if missing:
        msg = f"PLY vertex lacks {sorted(missing)}"
        raise ParseError(msg, source=name)
    points = np.column_stack([vertex[k].astype(np.float64) for k in ("x", "y", "z")])
    n = len(points)
    columns = [points[:, 0], points[:, 1], points[:, 2]]

    normals = None
    if {"nx", "ny", "nz"} <= fields:
        normals = np.column_stack([vertex[k].astype(np.float64) for k in ("nx", "ny", "nz")])
        columns += [normals[:, 0], normals[:, 1], normals[:, 2]]
    if "patch_id" in fields:
        patch_id = vertex["patch_id"].astype(np.int64)
    else:
        logger.warning("%s: no patch_id property; all points UNLABELED", name)
        patch_id = np.full(n, UNLABELED, dtype=np.int64)
    if "edge" in fields:
        edge = vertex["edge"].astype(np.float64)
        columns.append(edge)
    else:
        logger.warning("%s: no edge property; edge values default to 0", name)
        edge = np.zeros(n)

    bad = _first_bad_row(*columns)
    if bad is not None:
        msg = "non-finite value"
        raise ParseError(msg, source=name, row=bad)
    return _build_cloud(points, patch_id, edge, normals, name)


def _read_xyzl(data: bytes, name: str) -> LabeledPointCloud:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        msg = "not a PLY file and not UTF-8 text"
        raise ParseError(msg, source=name) from e
    rows: list[list[float]] = []
    width: int | None = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) not in (5, 8):
            msg = f"expected 5 or 8 columns, got {len(tokens)}"
            raise ParseError(msg, source=name, row=number)
        if width is not None and len(tokens) != width:
            msg = f"expected {width} columns like the first row"
            raise ParseError(msg, source=name, row=number)
        width = len(tokens)
        try:
            values = [float(t) for t in tokens]
        except ValueError as e:
            msg = f"not a number: {e}"
            raise ParseError(msg, source=name, row=number) from e
        if not all(math.isfinite(v) for v in values):
            msg = "non-finite value"
            raise ParseError(msg, source=name, row=number)
        if values[-2] != int(values[-2]):
            msg = f"patch_id {tokens[-2]!r} is not an integer"
            raise ParseError(msg, source=name, row=number)
        rows.append(values)
    table = np.array(rows, dtype=np.float64).reshape(-1, width or 5)
    normals = table[:, 3:6] if width == 8 else None
    return _build_cloud(table[:, :3], table[:, -2].astype(np.int64), table[:, -1], normals, name)


def _build_cloud(
    points: np.ndarray,
    patch_id: np.ndarray,
    edge: np.ndarray,
    normals: np.ndarray | None,
    name: str,
) -> LabeledPointCloud:
    try:
        return LabeledPointCloud(points=points, patch_id=patch_id, edge_flag=edge, normals=normals)
    except CloudError as e:
        raise ParseError(str(e), source=name) from e


# ---------------------------------------------------------------------------
# B-rep documents
# ---------------------------------------------------------------------------


def brep_from_document(document: dict[str, Any], source: str = "<stream>") -> BRepModel:
    """
    Rebuild a model from a parsed B-rep document.

    Raises:
        ParseError: On an unknown format tag or missing fields
    """
    if document.get("format") != BREP_FORMAT:
        msg = f"unsupported B-rep format {document.get('format')!r}, expected {BREP_FORMAT!r}"
        raise ParseError(msg, source=source)
    try:
        return BRepModel(
            corners=np.array(document["corners"], dtype=np.float64).reshape(-1, 3),
            edges=tuple(CurveSegment.from_dict(e) for e in document["edges"]),
            faces=tuple(Face.from_dict(f) for f in document["faces"]),
        )
    except (KeyError, TypeError, ValueError, GeometryError) as e:
        msg = f"invalid B-rep document: {e}"
        raise ParseError(msg, source=source) from e


def read_brep(path: str | Path) -> BRepModel:
    """
    Read a B-rep document written by write_brep.

    Raises:
        ParseError: On invalid JSON or an invalid document
    """
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        msg = f"invalid JSON: {e.msg}"
        raise ParseError(msg, source=str(path), row=e.lineno) from e
    model = brep_from_document(document, str(path))
    problems = model.violations()
    if problems:
        msg = "; ".join(problems)
        raise ParseError(msg, source=str(path))
    return model


# ---------------------------------------------------------------------------
# Gaussian scenes
# ---------------------------------------------------------------------------


def _parse_camera(values: list[float], name: str, row: int) -> Camera:
    if len(values) != _CAMERA_VALUES:
        msg = f"camera record needs {_CAMERA_VALUES} values, got {len(values)}"
        raise ParseError(msg, source=name, row=row)
    try:
        return Camera(
            origin=values[0:3],
            right=values[3:6],
            up=values[6:9],
            view=values[9:12],
            width=int(values[12]),
            height=int(values[13]),
            pixel_size=values[14],
        )
    except (SplatError, ValueError) as e:
        raise ParseError(str(e), source=name, row=row) from e


def _parse_gaussian(values: list[float], name: str, row: int) -> Gaussian2D:
    if len(values) < _GAUSSIAN_FIXED:
        msg = f"gaussian record needs at least {_GAUSSIAN_FIXED} values, got {len(values)}"
        raise ParseError(msg, source=name, row=row)
    return Gaussian2D(
        center=values[0:3],
        t_u=values[3:6],
        t_v=values[6:9],
        scales=values[9:11],
        opacity=values[11],
        color=values[12:15],
        edge=values[15],
        feature=np.array(values[16:], dtype=np.float64),
    )


def parse_scene(text: str, name: str = "<stream>") -> GaussianScene:
    """
    Parse the Gaussian scene text format.

    One record per line: "camera" followed by origin, right, up, view,
    width, height and pixel size, or a Gaussian as center, t_u, t_v,
    s_u s_v, opacity, color, edge and feature values. Invariants are not
    checked here; GaussianScene.validate does that.

    Raises:
        ParseError: On malformed rows or inconsistent feature dimensions
    """
    camera: Camera | None = None
    gaussians: list[Gaussian2D] = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        is_camera = tokens[0] == "camera"
        numbers = tokens[1:] if is_camera else tokens
        try:
            values = [float(t) for t in numbers]
        except ValueError as e:
            msg = f"not a number: {e}"
            raise ParseError(msg, source=name, row=number) from e
        if not all(math.isfinite(v) for v in values):
            msg = "non-finite value"
            raise ParseError(msg, source=name, row=number)
        if is_camera:
            if camera is not None:
                msg = "second camera record"
                raise ParseError(msg, source=name, row=number)
            camera = _parse_camera(values, name, number)
            continue
        g = _parse_gaussian(values, name, number)
        if gaussians and len(g.feature) != len(gaussians[0].feature):
            msg = "feature dimension differs from the first gaussian"
            raise ParseError(msg, source=name, row=number)
        gaussians.append(g)
    return GaussianScene(tuple(gaussians), camera)


def read_scene(path: str | Path) -> GaussianScene:
    """Read a Gaussian scene file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        msg = "scene file is not UTF-8 text"
        raise ParseError(msg, source=str(path)) from e
    return parse_scene(text, str(path))
