"""
Writers for clouds, B-rep documents, meshes, scenes, reports and images.

Provides functionality to:
- Serialize B-rep models as byte-stable JSON documents
- Write labeled point clouds as PLY (binary or ASCII) or XYZL text
- Write tessellated models as OBJ with edge polylines
- Write Gaussian scenes in the text format read by the loader
- Write metric and verification reports as JSON
- Write rendered maps as PFM images and 8-bit PNG previews
"""

from __future__ import annotations

import io
import json
from pathlib import Path
from typing import TYPE_CHECKING, Any

import aiofiles
import numpy as np
from numpy.typing import ArrayLike
from PIL import Image
from plyfile import PlyData, PlyElement

from brep_fitter.loader import BREP_FORMAT

if TYPE_CHECKING:
    from collections.abc import Mapping

    from brep_fitter.cloud import LabeledPointCloud
    from brep_fitter.geometry import BRepModel
    from brep_fitter.splat import GaussianScene
    from brep_fitter.tessellation import TriangleMesh

_ERR_IMAGE_SHAPE = "expected an (H, W) or (H, W, 3) image, got shape {shape}"


async def _write_text(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "w", encoding="utf-8") as f:
        await f.write(content)
    return path


async def _write_bytes(path: Path, content: bytes) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(path, "wb") as f:
        await f.write(content)
    return path


# ---------------------------------------------------------------------------
# B-rep documents
# ---------------------------------------------------------------------------


def brep_document(model: BRepModel) -> dict[str, Any]:
    """Document form of a model with fixed key order."""
    return {
        "format": BREP_FORMAT,
        "watertight": model.is_watertight(),
        "corners": [[float(x) for x in c] for c in model.corners],
        "edges": [e.to_dict() for e in model.edges],
        "faces": [f.to_dict() for f in model.faces],
        "flagged_faces": model.watertight_report(),
    }


def format_brep(model: BRepModel) -> str:
    """
    Serialize a model.

    Floats use their shortest round-trip representation, so identical
    models give identical text and reading restores every value exactly.
    """
    return json.dumps(brep_document(model), indent=2, allow_nan=False) + "\n"


async def write_brep(model: BRepModel, path: Path) -> Path:
    """
    Write a B-rep document.

    Args:
        model: Model to write
        path: Output file

    Returns:
        Path to the written file
    """
    return await _write_text(path, format_brep(model))


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


def format_xyzl(cloud: LabeledPointCloud) -> str:
    """XYZL rows, with normals between the coordinates and the label when present."""
    lines = ["# x y z" + (" nx ny nz" if cloud.normals is not None else "") + " patch_id edge"]
    for i in range(len(cloud)):
        values = [repr(float(x)) for x in cloud.points[i]]
        if cloud.normals is not None:
            values += [repr(float(x)) for x in cloud.normals[i]]
        values += [str(int(cloud.patch_id[i])), repr(float(cloud.edge_flag[i]))]
        lines.append(" ".join(values))
    return "\n".join(lines) + "\n"


def encode_ply(cloud: LabeledPointCloud, *, binary: bool = True) -> bytes:
    """PLY bytes with x, y, z, optional nx, ny, nz, patch_id and edge as vertex properties."""
    names = ["x", "y", "z"]
    columns = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    if cloud.normals is not None:
        names += ["nx", "ny", "nz"]
        columns += [cloud.normals[:, 0], cloud.normals[:, 1], cloud.normals[:, 2]]
    dtype = [(name, "f8") for name in names] + [("patch_id", "i4"), ("edge", "f8")]
    vertex = np.empty(len(cloud), dtype=dtype)
    for name, column in zip(names, columns, strict=True):
        vertex[name] = column
    vertex["patch_id"] = cloud.patch_id
    vertex["edge"] = cloud.edge_flag
    buffer = io.BytesIO()
    PlyData([PlyElement.describe(vertex, "vertex")], text=not binary).write(buffer)
    return buffer.getvalue()


async def write_cloud(cloud: LabeledPointCloud, path: Path, *, binary: bool = True) -> Path:
    """
    Write a cloud as PLY (for a .ply suffix) or XYZL text (anything else).

    Args:
        cloud: Cloud to write
        path: Output file
        binary: Binary little-endian PLY instead of ASCII

    Returns:
        Path to the written file
    """
    if path.suffix.lower() == ".ply":
        return await _write_bytes(path, encode_ply(cloud, binary=binary))
    return await _write_text(path, format_xyzl(cloud))


# ---------------------------------------------------------------------------
# Meshes and scenes
# ---------------------------------------------------------------------------


def format_obj(mesh: TriangleMesh) -> str:
    """OBJ text: one group per face followed by edge polylines."""
    lines = ["# brep-fitter tessellation"]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    current = None
    for tri, face in zip(mesh.triangles.tolist(), mesh.face_ids.tolist(), strict=True):
        if face != current:
            lines.append(f"g face_{face}")
            current = face
        lines.append("f " + " ".join(str(i + 1) for i in tri))
    next_vertex = len(mesh.vertices) + 1
    for e, polyline in enumerate(mesh.polylines):
        lines.append(f"g edge_{e}")
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in polyline.tolist()]
        lines.append("l " + " ".join(str(next_vertex + k) for k in range(len(polyline))))
        next_vertex += len(polyline)
    return "\n".join(lines) + "\n"


async def write_obj(mesh: TriangleMesh, path: Path) -> Path:
    """Write a tessellated model as OBJ."""
    return await _write_text(path, format_obj(mesh))


def format_scene(scene: GaussianScene) -> str:
    """Gaussian scene text with a camera record when the scene has one."""
    lines = [
        "# brep-fitter gaussian scene",
        "# gaussian: center(3) t_u(3) t_v(3) s_u s_v opacity color(3) edge feature(d)",
    ]
    cam = scene.camera
    if cam is not None:
        values = [*cam.origin, *cam.right, *cam.up, *cam.view]
        lines.append(
            "camera "
            + " ".join(repr(float(v)) for v in values)
            + f" {cam.width} {cam.height} {float(cam.pixel_size)!r}"
        )
    for g in scene.gaussians:
        values = [*g.center, *g.t_u, *g.t_v, *g.scales, g.opacity, *g.color, g.edge, *g.feature]
        lines.append(" ".join(repr(float(v)) for v in values))
    return "\n".join(lines) + "\n"


async def write_scene(scene: GaussianScene, path: Path) -> Path:
    """Write a Gaussian scene file."""
    return await _write_text(path, format_scene(scene))


async def write_report(report: Mapping[str, Any], path: Path) -> Path:
    """Write a report as indented JSON."""
    return await _write_text(path, json.dumps(report, indent=2) + "\n")


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def _image(values: ArrayLike) -> np.ndarray:
    image = np.asarray(values, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] == 1:
        image = image[..., 0]
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ValueError(_ERR_IMAGE_SHAPE.format(shape=image.shape))
    return image


def encode_pfm(values: ArrayLike) -> bytes:
    """
    Portable float map bytes.

    Color images use the "PF" header and single-channel images "Pf"; rows
    are stored bottom to top as little-endian float32.
    """
    image = _image(values)
    header = "PF" if image.ndim == 3 else "Pf"
    height, width = image.shape[:2]
    body = np.ascontiguousarray(image[::-1], dtype="<f4").tobytes()
    return f"{header}\n{width} {height}\n-1.0\n".encode("ascii") + body


def encode_png(values: ArrayLike) -> bytes:
    """8-bit PNG preview of an image with values in [0, 1] (clipped)."""
    image = _image(values)
    pixels = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    buffer = io.BytesIO()
    Image.fromarray(pixels).save(buffer, format="PNG")
    return buffer.getvalue()


async def write_pfm(values: ArrayLike, path: Path) -> Path:
    """Write a PFM image."""
    return await _write_bytes(path, encode_pfm(values))


async def write_png(values: ArrayLike, path: Path) -> Path:
    """Write a PNG preview."""
    return await _write_bytes(path, encode_png(values))
