"""
Gradients of the splatting losses.

Provides functionality to:
- Evaluate the selected losses of a scene as a function of its parameters
- Compute reverse-mode gradients w.r.t. every Gaussian parameter
- Freeze everything except the features for the second stage
- Compare gradients with central finite differences
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import torch
from numpy.typing import ArrayLike

from brep_fitter.losses import Stage1LossConfig, TripletConfig, loss_stage1, triplet_loss
from brep_fitter.splat import Camera, SceneTensors, SplatError, render_channels

logger = logging.getLogger(__name__)

Stage = Literal["stage1", "stage2"]
LossName = Literal["stage1", "triplet"]


@dataclass
class LossTargets:
    """
    Supervision for a scene.

    Attributes:
        color: (H, W, 3) target image
        edge: (H, W) target edge map
        masks: Boolean (H, W) patch masks for the triplet loss
        seed: Triplet sampling seed
    """

    color: ArrayLike | None = None
    edge: ArrayLike | None = None
    masks: list[ArrayLike] = field(default_factory=list)
    seed: int = 0


def scene_loss(
    scene: SceneTensors,
    cam: Camera,
    targets: LossTargets,
    losses: Sequence[LossName] = ("stage1", "triplet"),
    *,
    stage1: Stage1LossConfig | None = None,
    triplet: TripletConfig | None = None,
    min_weight: float = 1e-4,
) -> torch.Tensor:
    """Sum of the selected losses of a rendered scene."""
    stage1 = stage1 or Stage1LossConfig()
    triplet = triplet or TripletConfig()
    channels = []
    if "stage1" in losses:
        channels += ["color", "edge"]
    if "triplet" in losses:
        channels.append("feature")
    maps = render_channels(scene, cam, channels, min_weight=min_weight)
    total = torch.zeros((), dtype=torch.float64)
    if "stage1" in losses:
        if targets.color is None or targets.edge is None:
            msg = "stage1 loss needs color and edge targets"
            raise SplatError(msg)
        total = total + loss_stage1(maps, {"color": targets.color, "edge": targets.edge}, stage1)
    if "triplet" in losses:
        total = total + triplet_loss(maps["feature"], targets.masks, triplet, targets.seed)
    return total


def _trainable(stage: Stage) -> tuple[str, ...]:
    return ("feature",) if stage == "stage2" else SceneTensors.PARAMETERS


def analytic_gradients(
    scene: SceneTensors,
    cam: Camera,
    targets: LossTargets,
    losses: Sequence[LossName] = ("stage1", "triplet"),
    *,
    stage: Stage = "stage1",
    stage1: Stage1LossConfig | None = None,
    triplet: TripletConfig | None = None,
    min_weight: float = 1e-4,
) -> dict[str, np.ndarray]:
    """
    Reverse-mode gradients of the selected losses.

    Tangent gradients are reported w.r.t. the axis-angle rotation applied
    to the base tangents. In "stage2" only the features receive gradients.

    Args:
        scene: Sorted scene tensors
        cam: Camera
        targets: Loss targets
        losses: Losses to sum
        stage: "stage1" (every parameter) or "stage2" (features only)
        stage1: Photometric loss configuration
        triplet: Triplet configuration
        min_weight: Renderer skip threshold

    Returns:
        Parameter name to gradient array
    """
    names = _trainable(stage)
    leaves = {
        name: value.detach().clone().requires_grad_(name in names)
        for name, value in scene.parameters().items()
    }
    loss = scene_loss(
        scene.with_parameters(leaves),
        cam,
        targets,
        losses,
        stage1=stage1,
        triplet=triplet,
        min_weight=min_weight,
    )
    grads = torch.autograd.grad(loss, [leaves[n] for n in names], allow_unused=True)
    return {
        name: (np.zeros(tuple(leaves[name].shape)) if g is None else g.detach().numpy())
        for name, g in zip(names, grads, strict=True)
    }


@dataclass(frozen=True)
class GradientCheck:
    """Comparison of one analytic gradient entry with its finite difference."""

    parameter: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def abs_error(self) -> float:
        return abs(self.analytic - self.numeric)

    @property
    def rel_error(self) -> float:
        return self.abs_error / max(abs(self.analytic), abs(self.numeric), 1e-300)

    def passed(self, rel_tolerance: float = 1e-4, abs_tolerance: float = 1e-8) -> bool:
        return self.abs_error <= abs_tolerance or self.rel_error <= rel_tolerance


def finite_difference_check(
    scene: SceneTensors,
    cam: Camera,
    targets: LossTargets,
    losses: Sequence[LossName] = ("stage1", "triplet"),
    *,
    stage: Stage = "stage1",
    step: float = 1e-4,
    stage1: Stage1LossConfig | None = None,
    triplet: TripletConfig | None = None,
    min_weight: float = 0.0,
) -> list[GradientCheck]:
    """
    Compare analytic gradients with central differences of step h.

    Triplets are sampled with the same seed for every evaluation, so the
    sampled set is fixed while the hardest negative follows the features.

    Returns:
        One GradientCheck per trainable scalar parameter
    """
    analytic = analytic_gradients(
        scene, cam, targets, losses, stage=stage, stage1=stage1, triplet=triplet, min_weight=min_weight
    )

    def evaluate(name: str, value: torch.Tensor) -> float:
        perturbed = scene.with_parameters({**base, name: value})
        loss = scene_loss(
            perturbed, cam, targets, losses, stage1=stage1, triplet=triplet, min_weight=min_weight
        )
        return float(loss)

    base = {name: value.detach().clone() for name, value in scene.parameters().items()}
    checks: list[GradientCheck] = []
    with torch.no_grad():
        for name in _trainable(stage):
            values = base[name]
            for index in np.ndindex(*values.shape):
                plus, minus = values.clone(), values.clone()
                plus[index] += step
                minus[index] -= step
                numeric = (evaluate(name, plus) - evaluate(name, minus)) / (2.0 * step)
                checks.append(GradientCheck(name, tuple(index), float(analytic[name][index]), numeric))
    failed = [c for c in checks if not c.passed()]
    if failed:
        logger.debug("%d of %d gradient entries outside tolerance", len(failed), len(checks))
    return checks
