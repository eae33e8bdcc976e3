"""
Invariant suite for the splat renderer and losses.

Provides functionality to:
- Render scenes with an independent per-pixel compositing loop
- Generate randomized Gaussian scenes and loss targets
- Check kernel, ray mapping, compositing, Bezier and loss identities
- Check analytic gradients against central finite differences
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray

from brep_fitter.geometry import bezier_point
from brep_fitter.gradients import (
    LossName,
    LossTargets,
    Stage,
    analytic_gradients,
    finite_difference_check,
)
from brep_fitter.losses import (
    Stage1LossConfig,
    TripletConfig,
    cosine_distance,
    loss_edge,
    loss_geo,
    loss_stage1,
    triplet_loss,
)
from brep_fitter.splat import (
    Camera,
    Gaussian2D,
    GaussianScene,
    SceneTensors,
    SplatConfig,
    gaussian_kernel,
    pixel_local_coords,
    render_channels,
    render_scene,
    sample_gaussians_to_points,
    sort_front_to_back,
)
from brep_fitter.utils import FloatArray, orthonormal_basis, unit

logger = logging.getLogger(__name__)

RENDER_TOLERANCE = 1e-10
COORD_TOLERANCE = 1e-12
IDENTITY_TOLERANCE = 1e-12
ORACLE_SCENE_SIZE = 64
ORACLE_SCENE_GAUSSIANS = 10
TARGET_MARGIN = (0.05, 0.3)


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one verification check."""

    name: str
    passed: bool
    measured: float
    tolerance: float
    detail: str = ""

    def to_dict(self) -> dict[str, object]:
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": self.measured,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


def _result(name: str, measured: float, tolerance: float, detail: str = "") -> CheckResult:
    return CheckResult(name, bool(measured <= tolerance), float(measured), tolerance, detail)


# ---------------------------------------------------------------------------
# Oracles and scene generation
# ---------------------------------------------------------------------------


def ray_splat_oracle(g: Gaussian2D, cam: Camera, pixel: tuple[int, int]) -> FloatArray | None:
    """
    Ray/splat hit by solving origin + s * view = center + a * t_u + b * t_v.

    Returns:
        (a / s_u, b / s_v), or None for a ray parallel to the splat or a hit behind the ray start
    """
    if abs(float(cam.view @ np.cross(g.t_u, g.t_v))) <= 1e-9:
        return None
    A = np.column_stack([cam.view, -g.t_u, -g.t_v])
    s, a, b = np.linalg.solve(A, g.center - cam.ray_origin(*pixel))
    if s <= 0:
        return None
    return np.array([a / g.scales[0], b / g.scales[1]])


def render_naive(
    gaussians: Sequence[Gaussian2D], cam: Camera, *, min_weight: float = 1e-4
) -> dict[str, FloatArray]:
    """
    Composite already sorted Gaussians one pixel at a time.

    Returns:
        The same maps as render_scene
    """
    dim = len(gaussians[0].feature) if gaussians else 0
    color = np.zeros((cam.height, cam.width, 3))
    edge = np.zeros((cam.height, cam.width))
    feature = np.zeros((cam.height, cam.width, dim))
    alpha_map = np.zeros((cam.height, cam.width))
    for row in range(cam.height):
        for col in range(cam.width):
            transmittance = 1.0
            for g in gaussians:
                u = ray_splat_oracle(g, cam, (row, col))
                if u is None:
                    continue
                alpha = g.opacity * math.exp(-0.5 * (u[0] ** 2 + u[1] ** 2))
                if min_weight > 0 and alpha < min_weight:
                    continue
                w = alpha * transmittance
                color[row, col] += w * g.color
                edge[row, col] += w * g.edge
                feature[row, col] += w * g.feature
                alpha_map[row, col] += w
                transmittance *= 1.0 - alpha
    return {"color": color, "edge": edge, "feature": feature, "alpha": alpha_map}


def random_gaussian(rng: np.random.Generator, feature_dim: int = 16) -> Gaussian2D:
    """A splat over the unit square, tilted at most about 22 degrees from +z."""
    tilt = rng.uniform(-0.4, 0.4, size=2)
    normal = unit([tilt[0], tilt[1], 1.0])
    e1, e2 = orthonormal_basis(normal)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    t_u = math.cos(phi) * e1 + math.sin(phi) * e2
    t_v = np.cross(normal, t_u)
    return Gaussian2D(
        center=np.array([*rng.uniform(0.2, 0.8, size=2), rng.uniform(0.0, 0.5)]),
        t_u=t_u,
        t_v=t_v,
        scales=rng.uniform(0.12, 0.3, size=2),
        opacity=rng.uniform(0.3, 0.9),
        color=rng.uniform(0.0, 1.0, size=3),
        edge=rng.uniform(0.0, 1.0),
        feature=rng.normal(size=feature_dim),
    )


def random_scene(
    seed: int, n: int = 5, *, feature_dim: int = 16, size: int = 16
) -> GaussianScene:
    """Randomized scene of n Gaussians seen by a size x size downward camera."""
    rng = np.random.default_rng(seed)
    gaussians = [random_gaussian(rng, feature_dim) for _ in range(n)]
    return GaussianScene(tuple(gaussians), Camera.looking_down(size))


def quadrant_masks(height: int, width: int) -> list[NDArray[np.bool_]]:
    """Four boolean masks splitting an image into quadrants."""
    rows, cols = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    top, left = rows < height // 2, cols < width // 2
    return [top & left, top & ~left, ~top & left, ~top & ~left]


def random_targets(
    tensors: SceneTensors, cam: Camera, seed: int, *, margin: tuple[float, float] = TARGET_MARGIN
) -> LossTargets:
    """
    Color and edge targets offset from the scene's own render, with quadrant masks.

    Every target pixel differs from the rendered value by a random amount in
    margin, with a random sign that is flipped when it would leave [0, 1], so
    no finite-difference step crosses the kink of the L1 term.
    """
    rng = np.random.default_rng([seed, 1])
    with torch.no_grad():
        maps = render_channels(tensors, cam, ("color", "edge"), min_weight=0.0)

    def offset(rendered: FloatArray) -> FloatArray:
        size = rng.uniform(*margin, size=rendered.shape)
        sign = rng.choice([-1.0, 1.0], size=rendered.shape)
        sign = np.where((rendered + sign * size < 0.0) | (rendered + sign * size > 1.0), -sign, sign)
        return rendered + sign * size

    return LossTargets(
        color=offset(maps["color"].numpy()),
        edge=offset(maps["edge"].numpy()),
        masks=list(quadrant_masks(cam.height, cam.width)),
        seed=seed,
    )


def scene_camera(scene: GaussianScene) -> Camera:
    """The scene's camera, or a top-down camera over the unit square."""
    return scene.camera or Camera.looking_down(ORACLE_SCENE_SIZE)


def _max_map_difference(a: dict[str, FloatArray], b: dict[str, FloatArray]) -> float:
    return max(float(np.max(np.abs(a[k] - b[k]), initial=0.0)) for k in a)


# ---------------------------------------------------------------------------
# Checks
# ---------------------------------------------------------------------------


def check_kernel() -> CheckResult:
    cases = [((0.0, 0.0), 1.0), ((1.0, 0.0), math.exp(-0.5)), ((3.0, 4.0), math.exp(-12.5))]
    err = max(abs(gaussian_kernel(u) - expected) for u, expected in cases)
    return _result("kernel values", err, 1e-15)


def check_pixel_coords(scene: GaussianScene) -> CheckResult:
    cam = scene_camera(scene)
    err = 0.0
    mismatched = 0
    for g in scene.gaussians:
        row, col = cam.pixel_of(g.center)
        for r in range(max(row - 2, 0), min(row + 3, cam.height)):
            for c in range(max(col - 2, 0), min(col + 3, cam.width)):
                want = ray_splat_oracle(g, cam, (r, c))
                if want is None:
                    continue
                got = pixel_local_coords(g, cam, (r, c))
                if got is None:
                    mismatched += 1
                    continue
                err = max(err, float(np.max(np.abs(got - want))))
    if mismatched:
        return CheckResult("ray mapping", False, math.inf, COORD_TOLERANCE, f"{mismatched} skipped rays")
    return _result("ray mapping", err, COORD_TOLERANCE)


def check_render_oracle(scene: GaussianScene, min_weight: float = 1e-4) -> CheckResult:
    cam = scene_camera(scene)
    ordered = sort_front_to_back(scene.gaussians, cam)
    fast = render_scene(ordered, cam, min_weight=min_weight)
    naive = render_naive(ordered, cam, min_weight=min_weight)
    return _result(
        f"compositing vs per-pixel loop ({len(ordered)} gaussians, {cam.width}x{cam.height})",
        _max_map_difference(fast, naive),
        RENDER_TOLERANCE,
    )


def check_single_gaussian(feature_dim: int = 16) -> CheckResult:
    cam = Camera.looking_down(8)
    rng = np.random.default_rng(7)
    g = Gaussian2D(
        center=cam.ray_origin(3, 4) + cam.view,
        t_u=[1.0, 0.0, 0.0],
        t_v=[0.0, 1.0, 0.0],
        scales=[0.1, 0.2],
        opacity=1.0,
        color=rng.uniform(size=3),
        edge=0.7,
        feature=rng.normal(size=feature_dim),
    )
    maps = render_scene([g], cam)
    err = max(
        float(np.max(np.abs(maps["color"][3, 4] - g.color))),
        abs(float(maps["edge"][3, 4]) - g.edge),
        float(np.max(np.abs(maps["feature"][3, 4] - g.feature))),
    )
    return _result("opaque splat at its center pixel", err, IDENTITY_TOLERANCE)


def check_edge_bounds(scene: GaussianScene) -> CheckResult:
    maps = render_scene(scene.gaussians, scene_camera(scene))
    edge = maps["edge"]
    violation = max(0.0, -float(edge.min(initial=0.0)), float(edge.max(initial=0.0)) - 1.0)
    return _result("edge map within [0, 1]", violation, 0.0)


def check_sort_determinism(scene: GaussianScene, seed: int = 0) -> CheckResult:
    cam = scene_camera(scene)
    rng = np.random.default_rng(seed)
    shuffled = [scene.gaussians[i] for i in rng.permutation(len(scene.gaussians))]
    diff = _max_map_difference(render_scene(scene.gaussians, cam), render_scene(shuffled, cam))
    return _result("sort-then-render determinism", diff, 0.0)


def check_bezier() -> CheckResult:
    P = np.array([[0.0, 0.0, 0.0], [0.3, 1.0, 0.0], [0.7, -1.0, 0.5], [1.0, 0.0, 1.0]])
    line = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]])
    same = np.tile([0.2, 0.4, 0.6], (4, 1))
    errors = [
        np.abs(bezier_point(P, 0.0) - P[0]).max(),
        np.abs(bezier_point(P, 1.0) - P[3]).max(),
        np.abs(bezier_point(same, 0.37) - same[0]).max(),
        np.abs(bezier_point(line, 0.5) - [1.5, 0.0, 0.0]).max(),
    ]
    return _result("bezier identities", float(max(errors)), 1e-15)


def check_loss_identities(stage1: Stage1LossConfig, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    image = rng.uniform(size=(16, 16, 3))
    edge_r, edge_t = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
    pure_l1 = Stage1LossConfig(lam=0.0, edge_weight=stage1.edge_weight)
    combined = loss_stage1(
        {"color": torch.as_tensor(image), "edge": torch.as_tensor(edge_r)},
        {"color": image + 0.05, "edge": edge_t},
        stage1,
    )
    manual = loss_geo(image, image + 0.05, stage1) + stage1.edge_weight * loss_edge(edge_r, edge_t)
    errors = [
        float(loss_geo(image, image, stage1)),
        abs(float(loss_geo(image, image + 0.1, pure_l1)) - 0.1),
        abs(float(combined - manual)),
    ]
    return _result("photometric and edge loss identities", max(errors), IDENTITY_TOLERANCE)


def check_cosine(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng([seed, 3])
    a, b = rng.normal(size=16), rng.normal(size=16)
    e0, e1 = np.eye(16)[0], np.eye(16)[1]
    d = cosine_distance(a, b)
    errors = [
        abs(cosine_distance(a, a)),
        abs(cosine_distance(e0, e1) - 1.0),
        abs(cosine_distance(a, -a) - 2.0),
        abs(d - cosine_distance(b, a)),
        abs(d - cosine_distance(3.5 * a, b)),
        max(0.0, -d, d - 2.0),
    ]
    return _result("cosine distance identities", max(errors), IDENTITY_TOLERANCE)


def check_triplet_identities(triplet: TripletConfig, seed: int = 0) -> CheckResult:
    masks = quadrant_masks(8, 8)
    separated = np.zeros((8, 8, 16))
    for k, mask in enumerate(masks):
        separated[mask] = np.eye(16)[k]
    constant = np.ones((8, 8, 16))
    errors = [
        abs(float(triplet_loss(separated, masks, triplet, seed))),
        abs(float(triplet_loss(constant, masks, triplet, seed)) - triplet.margin),
    ]
    return _result("triplet loss identities", max(errors), IDENTITY_TOLERANCE)


def check_sampling_rule(cfg: SplatConfig) -> CheckResult:
    base = {"t_u": [1.0, 0.0, 0.0], "t_v": [0.0, 1.0, 0.0], "opacity": 1.0, "color": [0.5] * 3}
    iso = Gaussian2D(center=[0.0, 0.0, 0.0], scales=[0.1, 0.1], edge=0.0, **base)
    long = Gaussian2D(
        center=[1.0, 0.0, 0.0],
        scales=[0.1 * cfg.elongation_threshold * 2.5, 0.1],
        edge=0.0,
        **base,
    )
    counts = (
        len(sample_gaussians_to_points([iso], cfg.elongation_threshold).points),
        len(sample_gaussians_to_points([long], cfg.elongation_threshold).points),
    )
    error = abs(counts[0] - 5) + abs(counts[1] - 1)
    return _result("gaussian to point sampling", float(error), 0.0, f"counts {counts}")


def check_zero_loss_gradients(seed: int, cfg: SplatConfig, stage1: Stage1LossConfig) -> CheckResult:
    scene = random_scene(seed, cfg.gradient_gaussians, feature_dim=cfg.feature_dim, size=cfg.image_size)
    cam = scene_camera(scene)
    tensors = SceneTensors.from_gaussians(sort_front_to_back(scene.gaussians, cam))
    with torch.no_grad():
        maps = render_channels(tensors, cam, ("color", "edge"), min_weight=0.0)
    targets = LossTargets(color=maps["color"].numpy(), edge=maps["edge"].numpy())
    grads = analytic_gradients(tensors, cam, targets, ("stage1",), stage1=stage1, min_weight=0.0)
    largest = max(float(np.max(np.abs(g), initial=0.0)) for g in grads.values())
    return _result("zero-loss scene has zero gradients", largest, 1e-10)


def check_gradients(
    losses: tuple[LossName, ...],
    cfg: SplatConfig,
    *,
    stage1: Stage1LossConfig,
    triplet: TripletConfig,
    seed: int = 0,
) -> CheckResult:
    """
    Central-difference check over cfg.gradient_seeds randomized scenes.

    The triplet loss is checked on the features only.
    """
    stage: Stage = "stage2" if losses == ("triplet",) else "stage1"
    worst = 0.0
    failures = 0
    total = 0
    for k in range(cfg.gradient_seeds):
        scene_seed = seed * 1000 + k
        scene = random_scene(
            scene_seed, cfg.gradient_gaussians, feature_dim=cfg.feature_dim, size=cfg.image_size
        )
        cam = scene_camera(scene)
        tensors = SceneTensors.from_gaussians(sort_front_to_back(scene.gaussians, cam))
        checks = finite_difference_check(
            tensors,
            cam,
            random_targets(tensors, cam, scene_seed),
            losses,
            stage=stage,
            step=cfg.fd_step,
            stage1=stage1,
            triplet=triplet,
            min_weight=0.0,
        )
        total += len(checks)
        for c in checks:
            if c.abs_error > cfg.abs_tolerance:
                worst = max(worst, c.rel_error)
            if not c.passed(cfg.rel_tolerance, cfg.abs_tolerance):
                failures += 1
                logger.debug("gradient mismatch %s%s: %s", c.parameter, c.index, c)
    name = f"{' + '.join(losses)} gradients vs finite differences ({cfg.gradient_seeds} scenes)"
    return CheckResult(
        name, failures == 0, worst, cfg.rel_tolerance, f"{failures} of {total} entries outside"
    )


def run_suite(
    scene: GaussianScene,
    cfg: SplatConfig | None = None,
    *,
    stage1: Stage1LossConfig | None = None,
    triplet: TripletConfig | None = None,
    seed: int = 0,
    on_check: Callable[[CheckResult], None] | None = None,
) -> list[CheckResult]:
    """
    Run every check against a scene plus randomized scenes derived from seed.

    Args:
        scene: Scene under test (validated first)
        cfg: Splat configuration
        stage1: Photometric loss configuration
        triplet: Triplet configuration
        seed: Seed for randomized scenes and triplet sampling
        on_check: Called with each result as it completes

    Returns:
        Results in execution order

    Raises:
        SplatError: If the scene is invalid
    """
    cfg = cfg or SplatConfig()
    stage1 = stage1 or Stage1LossConfig()
    triplet = triplet or TripletConfig()
    scene.validate()
    oracle_scene = random_scene(
        seed, ORACLE_SCENE_GAUSSIANS, feature_dim=cfg.feature_dim, size=ORACLE_SCENE_SIZE
    )
    steps: list[Callable[[], CheckResult]] = [
        check_kernel,
        lambda: check_pixel_coords(scene),
        lambda: check_render_oracle(scene, cfg.min_weight),
        lambda: check_render_oracle(oracle_scene, cfg.min_weight),
        check_single_gaussian,
        lambda: check_edge_bounds(scene),
        lambda: check_sort_determinism(scene, seed),
        check_bezier,
        lambda: check_loss_identities(stage1, seed),
        lambda: check_cosine(seed),
        lambda: check_triplet_identities(triplet, seed),
        lambda: check_sampling_rule(cfg),
        lambda: check_zero_loss_gradients(seed, cfg, stage1),
        lambda: check_gradients(("stage1",), cfg, stage1=stage1, triplet=triplet, seed=seed),
        lambda: check_gradients(("triplet",), cfg, stage1=stage1, triplet=triplet, seed=seed),
    ]
    results = []
    for step in steps:
        result = step()
        logger.info("%s: %s (%.3g <= %.3g)", result.name, result.passed, result.measured, result.tolerance)
        results.append(result)
        if on_check is not None:
            on_check(result)
    return results
