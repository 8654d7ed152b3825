"""
Structure loss (boundary-weighted BCE + weighted IoU) over the four supervised
predictions, plus a class-rebalanced BCE on the edge logits.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import torch
import torch.nn.functional as F

from .decoder import PredictionBundle

BOUNDARY_GAIN = 5.0
BOUNDARY_WINDOW = 31


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    """Promote H×W to 1×1×H×W; B×1×H×W passes through."""
    if t.dim() == 2:
        return t[None, None]
    if t.dim() == 4:
        return t
    raise ValueError(f"Expected an H×W or B×1×H×W map, got shape {tuple(t.shape)}")


def _check_pair(logits: torch.Tensor, gt: torch.Tensor) -> None:
    if logits.shape != gt.shape:
        raise ValueError(
            f"Prediction shape {tuple(logits.shape)} "
            f"!= ground truth shape {tuple(gt.shape)}"
        )
    if not bool(((gt == 0) | (gt == 1)).all()):
        raise ValueError("Ground truth must be binary with values in {0, 1}")


def boundary_weights(
    gt: torch.Tensor, gain: float = BOUNDARY_GAIN, window: int = BOUNDARY_WINDOW
) -> torch.Tensor:
    """w = 1 + gain·|avgpool_window(gt) − gt| with replicate padding; w ∈ [1, 1 + gain]."""
    squeeze = gt.dim() == 2
    batch = _as_batch(gt)
    if not batch.is_floating_point():
        batch = batch.float()
    pad = window // 2
    padded = F.pad(batch, (pad, pad, pad, pad), mode="replicate")
    local = F.avg_pool2d(padded, window, stride=1)
    weights = 1.0 + gain * (local - batch).abs()
    return weights[0, 0] if squeeze else weights


def weighted_bce(
    logits: torch.Tensor, gt: torch.Tensor, w: torch.Tensor
) -> torch.Tensor:
    """Σ w·BCE(σ(logits), gt) / Σ w per image, averaged over the batch."""
    _check_pair(logits, gt)
    logits, gt, w = _as_batch(logits), _as_batch(gt), _as_batch(w)
    bce = F.binary_cross_entropy_with_logits(logits, gt, reduction="none")
    per_image = (w * bce).sum(dim=(2, 3)) / w.sum(dim=(2, 3))
    return per_image.mean()


def weighted_iou(
    logits: torch.Tensor, gt: torch.Tensor, w: torch.Tensor
) -> torch.Tensor:
    """1 − (inter + 1)/(union + 1) with w-weighted soft intersection and union."""
    _check_pair(logits, gt)
    logits, gt, w = _as_batch(logits), _as_batch(gt), _as_batch(w)
    p = torch.sigmoid(logits)
    inter = (w * p * gt).sum(dim=(2, 3))
    union = (w * (p + gt)).sum(dim=(2, 3)) - inter
    return (1.0 - (inter + 1.0) / (union + 1.0)).mean()


def edge_bce(logits: torch.Tensor, edge_gt: torch.Tensor) -> torch.Tensor:
    """BCE with a per-image positive weight #neg/#pos, floored at 1."""
    _check_pair(logits, edge_gt)
    logits, edge_gt = _as_batch(logits), _as_batch(edge_gt)
    positives = edge_gt.sum(dim=(1, 2, 3))
    negatives = edge_gt[0].numel() - positives
    ratio = torch.where(
        positives > 0, negatives / positives.clamp(min=1.0), torch.ones_like(positives)
    )
    pos_weight = ratio.clamp(min=1.0).view(-1, 1, 1, 1)
    return F.binary_cross_entropy_with_logits(logits, edge_gt, pos_weight=pos_weight)


@dataclass
class LossBreakdown:
    """Per-stage structure terms, the edge term and their sum."""

    wbce: List[torch.Tensor]
    wiou: List[torch.Tensor]
    edge_bce: torch.Tensor
    total: torch.Tensor

    def to_record(self) -> Dict[str, object]:
        return {
            "wbce": [float(v) for v in self.wbce],
            "wiou": [float(v) for v in self.wiou],
            "edge_bce": float(self.edge_bce),
            "total": float(self.total),
        }


def total_loss(
    bundle: PredictionBundle,
    gt: torch.Tensor,
    edge_gt: Optional[torch.Tensor],
    gain: float = BOUNDARY_GAIN,
    window: int = BOUNDARY_WINDOW,
) -> LossBreakdown:
    """
    Σ_i [wbce(P_i) + wiou(P_i)] + edge_bce(E).

    The edge term is zero when the bundle carries no edge logits (refinement
    ablated).
    """
    w = boundary_weights(gt, gain, window)
    wbce = [weighted_bce(p, gt, w) for p in bundle.masks]
    wiou = [weighted_iou(p, gt, w) for p in bundle.masks]
    if bundle.edge is not None:
        if edge_gt is None:
            raise ValueError("Edge logits present but no edge ground truth given")
        edge_term = edge_bce(bundle.edge, edge_gt)
    else:
        edge_term = torch.zeros((), dtype=gt.dtype, device=gt.device)

    total = edge_term
    for b, i in zip(wbce, wiou):
        total = total + b + i
    return LossBreakdown(wbce=wbce, wiou=wiou, edge_bce=edge_term, total=total)
