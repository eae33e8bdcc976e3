"""
Splatting losses.

Provides functionality to:
- Compute the photometric loss (L1 mixed with D-SSIM) and the edge loss
- Combine them into the first-stage objective
- Compute cosine feature distances and the hardest-negative triplet loss
- Compute the pairwise contrastive variant over the same sampled pairs
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import overload

import numpy as np
import torch
import torch.nn.functional as F
from numpy.typing import ArrayLike

from brep_fitter.splat import DTYPE, SplatError
from brep_fitter.utils import ConfigError, IntArray, require_positive

logger = logging.getLogger(__name__)

_ERR_SHAPE = "image shapes differ: {a} vs {b}"
_ERR_ZERO = "cosine distance of a zero vector"
_ERR_MASKS = "triplet loss needs at least 2 masks, got {got}"

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2


@dataclass(frozen=True)
class Stage1LossConfig:
    """
    First-stage objective weights.

    Attributes:
        lam: D-SSIM mixing weight lambda in [0, 1]
        edge_weight: Weight of the edge loss
    """

    lam: float = 0.2
    edge_weight: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            msg = f"stage1.lam must lie in [0, 1], got {self.lam}"
            raise ConfigError(msg)
        if self.edge_weight < 0:
            msg = f"stage1.edge_weight must be >= 0, got {self.edge_weight}"
            raise ConfigError(msg)


@dataclass(frozen=True)
class TripletConfig:
    """
    Triplet sampling.

    Attributes:
        margin: Margin m
        triplets_per_mask: Anchor/positive pairs sampled per valid mask
        negatives_per_mask: Candidate negatives sampled per mask
    """

    margin: float = 0.3
    triplets_per_mask: int = 16
    negatives_per_mask: int = 64

    def __post_init__(self) -> None:
        require_positive(
            "triplet",
            margin=self.margin,
            triplets_per_mask=self.triplets_per_mask,
            negatives_per_mask=self.negatives_per_mask,
        )


def _as_tensor(value: ArrayLike | torch.Tensor) -> torch.Tensor:
    if isinstance(value, torch.Tensor):
        return value.to(DTYPE)
    return torch.as_tensor(np.asarray(value, dtype=np.float64))


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        msg = _ERR_SHAPE.format(a=tuple(a.shape), b=tuple(b.shape))
        raise SplatError(msg)


def _gaussian_window(channels: int) -> torch.Tensor:
    coords = torch.arange(_SSIM_WINDOW, dtype=DTYPE) - _SSIM_WINDOW // 2
    g = torch.exp(-(coords**2) / (2 * _SSIM_SIGMA**2))
    g = g / g.sum()
    window = torch.outer(g, g)
    return window.expand(channels, 1, _SSIM_WINDOW, _SSIM_WINDOW).contiguous()


def _to_nchw(image: torch.Tensor) -> torch.Tensor:
    if image.dim() == 2:
        image = image[..., None]
    return image.permute(2, 0, 1)[None]


def ssim(a: ArrayLike | torch.Tensor, b: ArrayLike | torch.Tensor) -> torch.Tensor:
    """
    Mean SSIM with an 11x11 Gaussian window (sigma 1.5) and zero padding.

    Args:
        a: (H, W) or (H, W, C) image
        b: Image of the same shape

    Returns:
        Scalar tensor
    """
    x, y = _as_tensor(a), _as_tensor(b)
    _check_shapes(x, y)
    x, y = _to_nchw(x), _to_nchw(y)
    channels = x.shape[1]
    window = _gaussian_window(channels)
    pad = _SSIM_WINDOW // 2

    def blur(t: torch.Tensor) -> torch.Tensor:
        return F.conv2d(t, window, padding=pad, groups=channels)

    mu_x, mu_y = blur(x), blur(y)
    sigma_x = blur(x * x) - mu_x * mu_x
    sigma_y = blur(y * y) - mu_y * mu_y
    sigma_xy = blur(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _C1) * (2 * sigma_xy + _C2)
    den = (mu_x * mu_x + mu_y * mu_y + _C1) * (sigma_x + sigma_y + _C2)
    return (num / den).mean()


def loss_geo(
    rendered: ArrayLike | torch.Tensor,
    target: ArrayLike | torch.Tensor,
    cfg: Stage1LossConfig,
) -> torch.Tensor:
    """
    Photometric loss (1 - lambda) L1 + lambda (1 - SSIM) / 2.

    Raises:
        SplatError: On shape mismatch
    """
    x, y = _as_tensor(rendered), _as_tensor(target)
    _check_shapes(x, y)
    l1 = (x - y).abs().mean()
    if cfg.lam == 0:
        return (1.0 - cfg.lam) * l1
    return (1.0 - cfg.lam) * l1 + cfg.lam * (1.0 - ssim(x, y)) / 2.0


def loss_edge(
    rendered: ArrayLike | torch.Tensor,
    target: ArrayLike | torch.Tensor,
    mask: ArrayLike | torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Sum of squared edge-map differences over the edge pixel set.

    Args:
        rendered: Rendered edge map
        target: Target edge map
        mask: Edge pixel set (default: target > 0.5)

    Returns:
        Scalar tensor; 0 with a warning for an empty mask
    """
    x, y = _as_tensor(rendered), _as_tensor(target)
    _check_shapes(x, y)
    m = (y > 0.5) if mask is None else torch.as_tensor(np.asarray(mask, dtype=bool))
    if m.shape != x.shape[: m.dim()]:
        raise SplatError(_ERR_SHAPE.format(a=tuple(m.shape), b=tuple(x.shape)))
    if not bool(m.any()):
        logger.warning("edge mask is empty; edge loss is 0")
        return torch.zeros((), dtype=DTYPE)
    return ((x - y) ** 2)[m].sum()


def loss_stage1(
    rendered: dict[str, torch.Tensor],
    targets: dict[str, ArrayLike | torch.Tensor],
    cfg: Stage1LossConfig,
) -> torch.Tensor:
    """First-stage objective loss_geo(color) + edge_weight * loss_edge(edge)."""
    geo = loss_geo(rendered["color"], targets["color"], cfg)
    edge = loss_edge(rendered["edge"], targets["edge"], targets.get("edge_mask"))
    return geo + cfg.edge_weight * edge


@overload
def cosine_distance(f_a: torch.Tensor, f_b: ArrayLike | torch.Tensor) -> torch.Tensor: ...


@overload
def cosine_distance(f_a: ArrayLike, f_b: ArrayLike) -> float: ...


def cosine_distance(f_a: ArrayLike | torch.Tensor, f_b: ArrayLike | torch.Tensor) -> float | torch.Tensor:
    """
    Cosine distance 1 - (a / |a|) . (b / |b|) over the last axis.

    Returns a tensor when either input is a tensor, else a float.

    Raises:
        SplatError: If either vector is zero
    """
    a, b = _as_tensor(f_a), _as_tensor(f_b)
    na, nb = a.norm(dim=-1), b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise SplatError(_ERR_ZERO)
    d = 1.0 - ((a / na[..., None]) * (b / nb[..., None])).sum(dim=-1)
    if isinstance(f_a, torch.Tensor) or isinstance(f_b, torch.Tensor):
        return d
    return float(d)


@dataclass(frozen=True)
class Triplet:
    """Flat pixel indices of one sampled triplet and its candidate negatives."""

    anchor: int
    positive: int
    negatives: IntArray


def sample_triplets(masks: list[ArrayLike], cfg: TripletConfig, seed: int) -> list[Triplet]:
    """
    Sample anchor/positive pairs per valid mask with negatives from the other masks.

    Masks with fewer than 2 pixels are skipped. Negatives are drawn once per
    mask without replacement.

    Args:
        masks: Boolean (H, W) masks
        cfg: Triplet configuration
        seed: Sampling seed

    Returns:
        Sampled triplets in mask order

    Raises:
        SplatError: If fewer than 2 masks are given
    """
    if len(masks) < 2:
        raise SplatError(_ERR_MASKS.format(got=len(masks)))
    pixels = [np.flatnonzero(np.asarray(m, dtype=bool).reshape(-1)) for m in masks]
    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    for k, own in enumerate(pixels):
        if len(own) < 2:
            logger.debug("mask %d has %d pixel(s); skipped", k, len(own))
            continue
        others = np.unique(np.concatenate([p for j, p in enumerate(pixels) if j != k]))
        others = np.setdiff1d(others, own)
        if len(others) == 0:
            continue
        negatives = np.sort(
            rng.choice(others, size=min(cfg.negatives_per_mask, len(others)), replace=False)
        )
        for _ in range(cfg.triplets_per_mask):
            a_pos = int(rng.integers(len(own)))
            p_pos = int(rng.integers(len(own) - 1))
            if p_pos >= a_pos:
                p_pos += 1
            triplets.append(Triplet(int(own[a_pos]), int(own[p_pos]), negatives))
    return triplets


def _flat_features(feature_map: ArrayLike | torch.Tensor) -> torch.Tensor:
    f = _as_tensor(feature_map)
    return f.reshape(-1, f.shape[-1])


def hardest_negatives(feature_map: ArrayLike | torch.Tensor, triplets: list[Triplet]) -> list[int]:
    """Index of the candidate negative closest to each anchor."""
    feats = _flat_features(feature_map).detach()
    return [
        int(t.negatives[int(torch.argmin(cosine_distance(feats[t.anchor][None], feats[t.negatives])))])
        for t in triplets
    ]


def triplet_loss(
    feature_map: ArrayLike | torch.Tensor,
    masks: list[ArrayLike],
    cfg: TripletConfig,
    seed: int,
) -> torch.Tensor:
    """
    Mean hardest-negative triplet loss max(0, d(a, p) - d(a, n) + m).

    Args:
        feature_map: (H, W, d) rendered features
        masks: Boolean (H, W) patch masks
        cfg: Triplet configuration
        seed: Sampling seed

    Returns:
        Scalar tensor (0 with a warning when no triplet could be sampled)
    """
    triplets = sample_triplets(masks, cfg, seed)
    feats = _flat_features(feature_map)
    if not triplets:
        logger.warning("no valid triplets; triplet loss is 0")
        return torch.zeros((), dtype=DTYPE)
    negatives = hardest_negatives(feats, triplets)
    anchors = torch.tensor([t.anchor for t in triplets])
    positives = torch.tensor([t.positive for t in triplets])
    d_ap = cosine_distance(feats[anchors], feats[positives])
    d_an = cosine_distance(feats[anchors], feats[torch.tensor(negatives)])
    return torch.clamp(d_ap - d_an + cfg.margin, min=0.0).mean()


def pairwise_contrastive_loss(
    feature_map: ArrayLike | torch.Tensor,
    masks: list[ArrayLike],
    cfg: TripletConfig,
    seed: int,
) -> torch.Tensor:
    """
    Pairwise contrastive loss over the same sampled pairs.

    Mean d(a, p) over positive pairs plus mean max(0, m - d(a, n)) over every
    sampled negative pair.
    """
    triplets = sample_triplets(masks, cfg, seed)
    feats = _flat_features(feature_map)
    if not triplets:
        logger.warning("no valid pairs; contrastive loss is 0")
        return torch.zeros((), dtype=DTYPE)
    anchors = torch.tensor([t.anchor for t in triplets])
    positives = torch.tensor([t.positive for t in triplets])
    positive_term = cosine_distance(feats[anchors], feats[positives]).mean()
    neg_anchor = torch.tensor(np.concatenate([np.full(len(t.negatives), t.anchor) for t in triplets]))
    neg_index = torch.tensor(np.concatenate([t.negatives for t in triplets]))
    negative_term = torch.clamp(cfg.margin - cosine_distance(feats[neg_anchor], feats[neg_index]), min=0.0)
    return positive_term + negative_term.mean()
