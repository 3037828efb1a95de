"""Supervision stack: BCE, soft IoU, boundary targets, combined objectives.

Losses take probability maps (post-sigmoid) and binary ground truth.
Pixel terms are averaged per image and then over the batch, so the loss
scale does not grow with resolution.  Boundary ground truth is the mask
minus its erosion, giving a thin band around every object.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .layers import erode
from .tensor import Tensor, ShapeError, as_tensor, clip, log

__all__ = [
    "LossConfig",
    "SupervisionBundle",
    "bce_loss",
    "iou_loss",
    "make_edge_gt",
    "multilevel_edge_loss",
    "multilevel_saliency_loss",
    "saliency_term",
    "total_loss_rgb",
    "total_loss_rgbd",
]

PROB_EPS = 1e-7
NUM_LEVELS = 4


@dataclass
class LossConfig:
    """Ablation switches over the loss stack."""

    use_bce: bool = True
    use_iou: bool = True
    use_edge: bool = True
    use_multilevel: bool = True
    edge_radius: int = 1

    def __post_init__(self):
        if not (self.use_bce or self.use_iou):
            raise ValueError("at least one of BCE / IoU must stay enabled")


@dataclass
class SupervisionBundle:
    """Ground truth mask plus its derived boundary band."""

    saliency: np.ndarray
    edge: np.ndarray
    level_weights: tuple[float, ...] | None = None

    @staticmethod
    def from_mask(mask: np.ndarray, radius: int = 1, level_weights=None):
        return SupervisionBundle(
            saliency=np.asarray(mask, dtype=np.float64),
            edge=make_edge_gt(mask, radius),
            level_weights=level_weights,
        )


def _pair(pred, target) -> tuple[Tensor, Tensor]:
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return pred, target


def _per_image_axes(t: Tensor):
    """Reduce over everything but the leading batch axis (if 4-D)."""
    if t.ndim == 4:
        return (1, 2, 3)
    return None


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy; probabilities clamped at 1e-7."""
    pred, target = _pair(pred, target)
    p = clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    pix = target * log(p) + (1.0 - target) * log(1.0 - p)
    axes = _per_image_axes(pred)
    per_image = (-pix).mean(axis=axes) if axes else (-pix).mean()
    return per_image.mean() if axes else per_image


def iou_loss(pred: Tensor, target) -> Tensor:
    """1 - smoothed soft IoU, computed per image and batch-averaged."""
    pred, target = _pair(pred, target)
    axes = _per_image_axes(pred)
    inter = (pred * target).sum(axis=axes)
    union = (pred + target - pred * target).sum(axis=axes)
    ratio = (inter + 1.0) / (union + 1.0)
    loss = 1.0 - ratio
    return loss.mean() if axes else loss


def make_edge_gt(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Boundary band: mask minus its erosion, still binary."""
    mask = np.asarray(mask, dtype=np.float64)
    return mask - erode(mask, radius)


def saliency_term(pred: Tensor, target, use_bce: bool = True, use_iou: bool = True) -> Tensor:
    """Single-level saliency loss: BCE + IoU (either droppable for ablation)."""
    parts = []
    if use_bce:
        parts.append(bce_loss(pred, target))
    if use_iou:
        parts.append(iou_loss(pred, target))
    if not parts:
        raise ValueError("at least one of BCE / IoU must stay enabled")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def _check_levels(preds: Sequence[Tensor]) -> None:
    if len(preds) != NUM_LEVELS:
        raise ShapeError(f"expected {NUM_LEVELS} prediction levels, got {len(preds)}")


def multilevel_saliency_loss(
    preds: Sequence[Tensor],
    target,
    weights: Sequence[float] | None = None,
    use_bce: bool = True,
    use_iou: bool = True,
) -> Tensor:
    """Saliency supervision summed over all four decoder levels."""
    _check_levels(preds)
    weights = weights or (1.0,) * NUM_LEVELS
    total = None
    for w, pred in zip(weights, preds):
        term = saliency_term(pred, target, use_bce, use_iou) * float(w)
        total = term if total is None else total + term
    return total


def multilevel_edge_loss(
    preds: Sequence[Tensor],
    edge_target,
    weights: Sequence[float] | None = None,
) -> Tensor:
    """Boundary supervision (BCE form) summed over all four levels."""
    _check_levels(preds)
    weights = weights or (1.0,) * NUM_LEVELS
    total = None
    for w, pred in zip(weights, preds):
        term = bce_loss(pred, edge_target) * float(w)
        total = term if total is None else total + term
    return total


def total_loss_rgb(saliency_loss: Tensor, edge_loss: Tensor) -> Tensor:
    return (as_tensor(saliency_loss) + as_tensor(edge_loss)) / 2.0


def total_loss_rgbd(saliency_loss: Tensor, depth_loss: Tensor, edge_loss: Tensor) -> Tensor:
    return (as_tensor(saliency_loss) + as_tensor(depth_loss) + as_tensor(edge_loss)) / 3.0
