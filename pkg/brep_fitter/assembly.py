"""
B-rep assembly.

Provides functionality to:
- Snap segment endpoints onto clustered corners
- Trace each face's boundary loops in its surface chart and orient them
- Prune faces with too little support together with their exclusive edges and corners
- Assemble fits, segments and corners into a BRepModel with a watertightness report
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from brep_fitter.charts import SurfaceChart, chart_delta, chart_for, project_loop
from brep_fitter.cloud import LabeledPointCloud
from brep_fitter.fitting import PrimitiveFit
from brep_fitter.geometry import (
    TWO_PI,
    Bezier,
    BezierLoop,
    BRepModel,
    Circle,
    Curve,
    CurveSegment,
    Face,
    FaceLoop,
    Line,
    Primitive,
    Sphere,
)
from brep_fitter.intersection import fit_cubic_fixed_ends
from brep_fitter.utils import ConfigError, FloatArray, require_positive, row_norms

logger = logging.getLogger(__name__)

_ERR_EMPTY = "empty model: no fittable patches"

_END_REACH_SPACINGS = 8.0


class AssemblyError(Exception):
    """Exception raised when no B-rep can be assembled."""


@dataclass(frozen=True)
class AssemblyConfig:
    """
    Assembly parameters.

    Attributes:
        snap_radius: Endpoints within this distance of a corner snap to it
        min_face_inliers: Faces with fewer inliers are pruned
        loop_closure_tolerance: Corner-free curves whose ends are this close are closed
    """

    snap_radius: float = 0.02
    min_face_inliers: int = 30
    loop_closure_tolerance: float = 0.01

    def __post_init__(self) -> None:
        require_positive(
            "assembly",
            snap_radius=self.snap_radius,
            min_face_inliers=self.min_face_inliers,
            loop_closure_tolerance=self.loop_closure_tolerance,
        )
        if int(self.min_face_inliers) != self.min_face_inliers:
            msg = f"assembly.min_face_inliers must be an integer, got {self.min_face_inliers!r}"
            raise ConfigError(msg)


@dataclass
class AssemblyResult:
    """Assembled model plus the per-face report."""

    model: BRepModel
    report: list[dict[str, Any]] = field(default_factory=list)

    @property
    def watertight(self) -> bool:
        return self.model.is_watertight()

    @property
    def flagged_faces(self) -> list[dict[str, Any]]:
        return [entry for entry in self.report if not entry["watertight"]]


# ---------------------------------------------------------------------------
# Snapping
# ---------------------------------------------------------------------------


def _nearest_corner(point: FloatArray, corners: FloatArray, radius: float) -> int | None:
    """Closest corner within radius; ties go to the smaller index."""
    if len(corners) == 0:
        return None
    dist = row_norms(corners - point)
    best = int(np.argmin(dist))
    return best if dist[best] <= radius else None


def _period(curve: Curve) -> float | None:
    if isinstance(curve, Circle):
        return TWO_PI
    if isinstance(curve, BezierLoop):
        return curve.period
    return None


def _nearest_parameter(target: float, reference: float, period: float) -> float:
    """Parameter congruent to target (mod period) closest to reference."""
    half = 0.5 * period
    return reference + ((target - reference + half) % period - half)


def _corner_along(
    seg: CurveSegment, corners: FloatArray, cfg: AssemblyConfig, *, at_end: bool
) -> int | None:
    """
    Corner lying on the curve near one end of a segment.

    The corner must be within snap_radius of the curve and its parameter at
    most 8 support spacings beyond the end, or inside the segment's half on
    that side. Ties go to the smaller index.
    """
    if len(corners) == 0 or isinstance(seg.geometry, Bezier):
        return None
    lo, hi = seg.t_range
    reach = _END_REACH_SPACINGS * (hi - lo) / max(seg.support_count - 1, 1)
    t, dist = seg.geometry.closest_parameter(corners)
    end = hi if at_end else lo
    period = _period(seg.geometry)
    if period is not None:
        t = np.array([_nearest_parameter(float(x), end, period) for x in t])
    outward = t - end if at_end else end - t
    ok = (dist <= cfg.snap_radius) & (outward <= reach) & (outward >= -0.5 * (hi - lo))
    if not ok.any():
        return None
    candidates = np.flatnonzero(ok)
    return int(candidates[np.argmin(np.abs(outward[candidates]), kind="stable")])


def _snap_line(seg: CurveSegment, corners: FloatArray, a: int | None, b: int | None) -> CurveSegment:
    start = corners[a] if a is not None else seg.start
    end = corners[b] if b is not None else seg.end
    length = float(np.linalg.norm(end - start))
    if length <= 1e-12:
        return replace(seg, endpoint_corners=(a, None))
    line = Line(start, (end - start) / length)
    return replace(seg, geometry=line, t_range=(0.0, length), endpoint_corners=(a, b))


def _snap_periodic(seg: CurveSegment, corners: FloatArray, a: int | None, b: int | None) -> CurveSegment:
    curve = seg.geometry
    period = _period(curve)
    assert period is not None
    lo, hi = seg.t_range
    if a is not None:
        lo = _nearest_parameter(float(curve.closest_parameter(corners[a])[0][0]), lo, period)
    if b is not None:
        hi = _nearest_parameter(float(curve.closest_parameter(corners[b])[0][0]), hi, period)
        if a is not None and a == b and hi <= lo:
            hi = lo + period
    if not lo < hi <= lo + period + 1e-12:
        return seg
    return replace(seg, t_range=(lo, min(hi, lo + period)), endpoint_corners=(a, b))


def _snap_bezier(seg: CurveSegment, corners: FloatArray, a: int | None, b: int | None) -> CurveSegment:
    curve = seg.geometry
    assert isinstance(curve, Bezier)
    lo, hi = seg.t_range
    piece = curve.restrict(lo, hi)
    P = piece.control_points.copy()
    p0 = corners[a] if a is not None else P[0]
    p3 = corners[b] if b is not None else P[3]
    samples = curve.samples
    if samples is not None:
        t_all, _ = curve.closest_parameter(samples)
        inside = (t_all >= lo) & (t_all <= hi)
        if np.count_nonzero(inside) >= 4:
            local = (t_all[inside] - lo) / (hi - lo)
            order = np.argsort(local, kind="stable")
            P = fit_cubic_fixed_ends(samples[inside][order], p0, p3, local[order])
        else:
            P[0], P[3] = p0, p3
    else:
        P[0], P[3] = p0, p3
    return replace(
        seg, geometry=Bezier(P, samples), t_range=(0.0, 1.0), endpoint_corners=(a, b)
    )


def snap_endpoints(
    segments: list[CurveSegment], corners: ArrayLike, cfg: AssemblyConfig
) -> list[CurveSegment]:
    """
    Move segment endpoints onto nearby corners.

    An endpoint snaps to the closest corner within snap_radius; a line or
    periodic curve end without one snaps to a corner lying on its curve a few
    support spacings away. Lines are rebuilt through their corners, circles
    and Bezier loops get adjusted parameters, and Bezier curves are
    restricted to their range, get new end control points and refit interior
    control points against the traced polyline. Segments without corners
    whose ends meet are marked closed.

    Args:
        segments: Extracted segments
        corners: (K, 3) corners sorted lexicographically
        cfg: Assembly configuration

    Returns:
        Snapped segments in input order
    """
    pts = np.asarray(corners, dtype=np.float64).reshape(-1, 3)
    out: list[CurveSegment] = []
    for seg in segments:
        if seg.closed:
            out.append(replace(seg, endpoint_corners=(None, None)))
            continue
        a = _nearest_corner(seg.start, pts, cfg.snap_radius)
        b = _nearest_corner(seg.end, pts, cfg.snap_radius)
        if a is None:
            a = _corner_along(seg, pts, cfg, at_end=False)
        if b is None:
            b = _corner_along(seg, pts, cfg, at_end=True)
        if a is None and b is None:
            if np.linalg.norm(seg.start - seg.end) <= cfg.loop_closure_tolerance:
                period = _period(seg.geometry)
                if period is not None:
                    seg = replace(seg, t_range=(0.0, period))
                out.append(replace(seg, closed=True, endpoint_corners=(None, None)))
            else:
                out.append(seg)
            continue
        if isinstance(seg.geometry, Line):
            out.append(_snap_line(seg, pts, a, b))
        elif isinstance(seg.geometry, Bezier):
            out.append(_snap_bezier(seg, pts, a, b))
        else:
            out.append(_snap_periodic(seg, pts, a, b))
    return out


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------


def _is_self_loop(seg: CurveSegment) -> bool:
    a, b = seg.endpoint_corners
    return seg.closed or (a is not None and a == b)


def _direction_at(chart: SurfaceChart, seg: CurveSegment, at_end: bool) -> FloatArray:
    """Chart direction of travel leaving a segment's endpoint (into the segment)."""
    lo, hi = seg.t_range
    delta = 1e-3 * (hi - lo)
    t0, t1 = (hi, hi - delta) if at_end else (lo, lo + delta)
    uv = chart.to_uv(seg.geometry.evaluate(np.array([t0, t1])))
    d = chart_delta(chart, uv[0], uv[1])
    norm = float(np.linalg.norm(d))
    return d / norm if norm > 0 else d


def _segment_polyline(seg: CurveSegment, reversed_: bool, samples: int = 64) -> FloatArray:
    pts = seg.sample(samples)
    return pts[::-1] if reversed_ else pts


def _chart_for_face(surface: Primitive, interior: FloatArray | None) -> SurfaceChart:
    center = None
    if isinstance(surface, Sphere) and interior is not None and len(interior):
        center = interior.mean(axis=0) - surface.center
    return chart_for(surface, center)


def _trace_loops(
    chart: SurfaceChart, segments: dict[int, CurveSegment]
) -> tuple[list[FaceLoop], list[tuple[int, ...]]]:
    """Greedy loop extraction over the corner incidence graph of one face."""
    loops: list[FaceLoop] = []
    chains: list[tuple[int, ...]] = []
    unused = set()
    for idx, seg in sorted(segments.items()):
        a, b = seg.endpoint_corners
        if _is_self_loop(seg):
            loops.append(FaceLoop((idx,), (False,)))
        elif a is None or b is None:
            chains.append((idx,))
        else:
            unused.add(idx)

    while unused:
        first = min(unused)
        unused.discard(first)
        start = segments[first].endpoint_corners[0]
        current = segments[first].endpoint_corners[1]
        edges, flags = [first], [False]
        while current != start:
            options = []
            for idx in sorted(unused):
                a, b = segments[idx].endpoint_corners
                if a == current:
                    options.append((idx, False))
                elif b == current:
                    options.append((idx, True))
            if not options:
                break
            if len(options) > 1:
                last = segments[edges[-1]]
                incoming = -_direction_at(chart, last, at_end=not flags[-1])

                def turn(option: tuple[int, bool], incoming: FloatArray = incoming) -> tuple[float, int]:
                    out = _direction_at(chart, segments[option[0]], at_end=option[1])
                    cross = incoming[0] * out[1] - incoming[1] * out[0]
                    angle = math.atan2(cross, float(incoming @ out))
                    return (-angle, option[0])

                options.sort(key=turn)
            idx, rev = options[0]
            unused.discard(idx)
            edges.append(idx)
            flags.append(rev)
            a, b = segments[idx].endpoint_corners
            current = a if rev else b
        if current == start:
            loops.append(FaceLoop(tuple(edges), tuple(flags)))
        else:
            chains.append(tuple(edges))
    return loops, chains


def _orient_loops(
    chart: SurfaceChart,
    segments: dict[int, CurveSegment],
    loops: list[FaceLoop],
    interior: FloatArray | None,
) -> list[FaceLoop]:
    """
    Orient loops so the face lies on their left.

    The non-wrapping loop with the largest area is counter-clockwise, the
    others clockwise; loops wrapping around a cylinder run towards increasing
    angle when the face lies above them.
    """
    projected = []
    for loop in loops:
        pts = np.concatenate(
            [
                _segment_polyline(segments[e], r)[:-1]
                for e, r in zip(loop.edges, loop.reversed, strict=True)
            ]
        )
        projected.append(project_loop(chart, pts))
    any_wrap = any(p.wraps for p in projected)
    areas = [abs(p.area) if not p.wraps else -1.0 for p in projected]
    outer = int(np.argmax(areas)) if areas and not any_wrap else -1
    face_height = None
    if interior is not None and len(interior) and any_wrap:
        face_height = float(np.mean(chart.to_uv(interior)[:, 1]))

    oriented = []
    for k, (loop, proj) in enumerate(zip(loops, projected, strict=True)):
        if proj.wraps:
            forward = proj.uv[-1, 0] > proj.uv[0, 0]
            below_face = face_height is None or float(np.mean(proj.uv[:, 1])) <= face_height
            flip = forward != below_face
        else:
            ccw = proj.area > 0
            flip = ccw != (k == outer)
        oriented.append(loop.flipped() if flip else loop)
    return oriented


def build_face_loops(
    surface: Primitive,
    segments: dict[int, CurveSegment],
    *,
    interior: FloatArray | None = None,
) -> tuple[tuple[FaceLoop, ...], tuple[tuple[int, ...], ...], bool]:
    """
    Extract and orient the boundary loops of one face.

    Args:
        surface: Face surface
        segments: Edge index to snapped segment for the face's edges
        interior: Optional face inlier points (chart centering and orientation)

    Returns:
        Tuple of (loops, open chains, watertight flag)
    """
    chart = _chart_for_face(surface, interior)
    loops, chains = _trace_loops(chart, segments)
    if loops:
        loops = _orient_loops(chart, segments, loops, interior)
    watertight = not chains and (bool(loops) or isinstance(surface, Sphere))
    return tuple(loops), tuple(chains), watertight


# ---------------------------------------------------------------------------
# Pruning and assembly
# ---------------------------------------------------------------------------


def prune_fragments(
    model: BRepModel, fits: dict[int, PrimitiveFit], cfg: AssemblyConfig
) -> BRepModel:
    """
    Remove weakly supported faces and everything only they used.

    Faces with fewer than min_face_inliers inliers go first, then edges none
    of whose source faces survive, then corners no surviving edge references.
    Topology is reindexed consistently.

    Args:
        model: Draft model
        fits: Fits by patch id (inlier counts)
        cfg: Assembly configuration

    Returns:
        Pruned model
    """

    def support(face: Face) -> int:
        fit = fits.get(face.patch_id)
        return len(fit.inlier_indices) if fit is not None else face.surface.inlier_count

    faces = [f for f in model.faces if support(f) >= cfg.min_face_inliers]
    for face in model.faces:
        if face not in faces:
            logger.info("pruned face of patch %d (%d inliers)", face.patch_id, support(face))
    alive = {f.patch_id for f in faces}
    keep_edges = [
        i for i, e in enumerate(model.edges) if any(p in alive for p in e.source_faces)
    ]
    edge_map = {old: new for new, old in enumerate(keep_edges)}
    used = sorted(
        {c for i in keep_edges for c in model.edges[i].endpoint_corners if c is not None}
    )
    corner_map = {old: new for new, old in enumerate(used)}

    def remap(c: int | None) -> int | None:
        return None if c is None else corner_map[c]

    edges = [
        replace(
            model.edges[i],
            endpoint_corners=(
                remap(model.edges[i].endpoint_corners[0]),
                remap(model.edges[i].endpoint_corners[1]),
            ),
        )
        for i in keep_edges
    ]
    new_faces = [
        replace(
            f,
            loops=tuple(
                FaceLoop(tuple(edge_map[e] for e in loop.edges), loop.reversed) for loop in f.loops
            ),
            open_chains=tuple(tuple(edge_map[e] for e in chain) for chain in f.open_chains),
        )
        for f in faces
    ]
    corners = model.corners[used] if used else np.empty((0, 3))
    return BRepModel(corners, tuple(edges), tuple(new_faces))


def face_report(model: BRepModel) -> list[dict[str, Any]]:
    """Per-face summary: patch id, kind, loop count, watertight flag, open chains."""
    return [
        {
            "face": i,
            "patch_id": face.patch_id,
            "kind": face.surface.kind.value,
            "loops": len(face.loops),
            "watertight": face.watertight,
            "open_chains": [list(c) for c in face.open_chains],
        }
        for i, face in enumerate(model.faces)
    ]


def assemble_brep(
    cloud: LabeledPointCloud,
    fits: dict[int, PrimitiveFit],
    segments: list[CurveSegment],
    corners: ArrayLike,
    cfg: AssemblyConfig,
) -> AssemblyResult:
    """
    Snap, build loops per face and prune into a BRepModel.

    Args:
        cloud: Normalized cloud the fits index into
        fits: Fits by patch id
        segments: Extracted segments
        corners: Clustered corners
        cfg: Assembly configuration

    Returns:
        AssemblyResult with the model and its watertightness report

    Raises:
        AssemblyError: If there are no fits
    """
    if not fits:
        raise AssemblyError(_ERR_EMPTY)
    corner_pts = np.asarray(corners, dtype=np.float64).reshape(-1, 3)
    snapped = snap_endpoints(segments, corner_pts, cfg)
    faces = []
    for patch_id in sorted(fits):
        fit = fits[patch_id]
        own = {i: s for i, s in enumerate(snapped) if patch_id in s.source_faces}
        interior = cloud.points[fit.inlier_indices]
        loops, chains, watertight = build_face_loops(fit.primitive, own, interior=interior)
        if not watertight:
            logger.warning(
                "face of patch %d is not watertight (%d open chain(s))", patch_id, len(chains)
            )
        faces.append(Face(fit.primitive, patch_id, loops, chains, watertight))
    draft = BRepModel(corner_pts, tuple(snapped), tuple(faces))
    model = prune_fragments(draft, fits, cfg)
    model.validate()
    return AssemblyResult(model, face_report(model))

