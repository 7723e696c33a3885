"""Loss components and their weighted composition."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FogDetError, InvalidArgumentError

Scalar = Union[float, torch.Tensor]


class NumericError(FogDetError, ArithmeticError):
    def __init__(self, component: str, value):
        super().__init__(f"non-finite loss component {component!r}: {value}")
        self.component = component


@dataclass(frozen=True)
class LossWeights:
    w_det: float = 1.0
    w_adv: float = 0.1
    w_depth: float = 0.1
    w_rec: float = 0.1
    w_cons: float = 0.5
    reg_strength: float = 1e-4

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0:
                raise InvalidArgumentError(f"loss weight {f.name} must be >= 0")
        if self.w_det != 1.0:
            raise InvalidArgumentError("w_det is fixed at 1.0")

    @classmethod
    def detection_only(cls) -> "LossWeights":
        return cls(w_adv=0.0, w_depth=0.0, w_rec=0.0, w_cons=0.0, reg_strength=0.0)

    @property
    def auxiliary_off(self) -> bool:
        return self.w_adv == self.w_depth == self.w_rec == self.w_cons == self.reg_strength == 0.0


PART_NAMES = ("rpn_cls", "rpn_reg", "roi_cls", "roi_reg", "adv", "depth", "rec", "cons", "reg")
_AUX = (("adv", "w_adv"), ("depth", "w_depth"), ("rec", "w_rec"), ("cons", "w_cons"), ("reg", "reg_strength"))


@dataclass
class LossBreakdown:
    rpn_cls: Scalar = 0.0
    rpn_reg: Scalar = 0.0
    roi_cls: Scalar = 0.0
    roi_reg: Scalar = 0.0
    adv: Scalar = 0.0
    depth: Scalar = 0.0
    rec: Scalar = 0.0
    cons: Scalar = 0.0
    reg: Scalar = 0.0
    total: Scalar = 0.0

    @property
    def detection(self) -> Scalar:
        return self.rpn_cls + self.rpn_reg + self.roi_cls + self.roi_reg

    def to_record(self) -> dict:
        return {f.name: _to_float(getattr(self, f.name)) for f in fields(self)}


def _to_float(v) -> float:
    return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)


def smooth_l1(pred, target) -> torch.Tensor:
    """Mean over elements of ``0.5 x**2`` for ``|x| < 1`` else ``|x| - 0.5``."""
    x = torch.as_tensor(pred) - torch.as_tensor(target)
    if x.numel() == 0:
        return x.sum()
    ax = x.abs()
    return torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5).mean()


def sample_anchors(labels: np.ndarray, rng: np.random.Generator, batch: int = 256,
                   positive_fraction: float = 0.5) -> np.ndarray:
    """Choose up to ``batch`` labelled anchors, at most half positive, padded with negatives."""
    pos = np.where(labels == 1)[0]
    neg = np.where(labels == 0)[0]
    n_pos = min(len(pos), int(batch * positive_fraction))
    n_neg = min(len(neg), batch - n_pos)
    if n_pos < len(pos):
        pos = rng.choice(pos, n_pos, replace=False)
    if n_neg < len(neg):
        neg = rng.choice(neg, n_neg, replace=False)
    return np.sort(np.concatenate([pos, neg])).astype(np.int64)


def rpn_loss(objectness_logits: torch.Tensor, deltas: torch.Tensor, labels: np.ndarray,
             target_deltas: np.ndarray, sampled: np.ndarray):
    """Binary cross-entropy over the sampled anchors and smooth L1 over sampled positives."""
    idx = torch.as_tensor(sampled, dtype=torch.int64)
    lab = torch.as_tensor(labels, dtype=torch.int64)[idx]
    if idx.numel() == 0:
        zero = objectness_logits.sum() * 0.0
        return zero, zero
    cls = F.binary_cross_entropy_with_logits(objectness_logits[idx], lab.to(objectness_logits.dtype))
    pos = idx[lab == 1]
    if pos.numel() == 0:
        reg = deltas.sum() * 0.0
    else:
        tgt = torch.as_tensor(target_deltas, dtype=deltas.dtype)[pos]
        reg = smooth_l1(deltas[pos], tgt)
    return cls, reg


def roi_head_loss(class_logits: torch.Tensor, refinements: torch.Tensor, labels,
                  target_deltas) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-entropy over ``K + 1`` classes (background = ``K``) and smooth L1 on foreground.

    ``target_deltas`` rows for background ROIs are ignored.
    """
    labels = torch.as_tensor(labels, dtype=torch.int64)
    num_classes = refinements.shape[1]
    if labels.numel() == 0:
        zero = class_logits.sum() * 0.0
        return zero, zero
    cls = F.cross_entropy(class_logits, labels)
    fg = torch.where(labels < num_classes)[0]
    if fg.numel() == 0:
        return cls, refinements.sum() * 0.0
    tgt = torch.as_tensor(np.asarray(target_deltas), dtype=refinements.dtype)[fg]
    reg = smooth_l1(refinements[fg, labels[fg]], tgt)
    return cls, reg


def adversarial_domain_loss(domain_logits: torch.Tensor, is_target) -> torch.Tensor:
    """BCE of the discriminator with target-domain images labelled 1."""
    y = torch.as_tensor(np.asarray(is_target, dtype=np.float64), dtype=domain_logits.dtype)
    return F.binary_cross_entropy_with_logits(domain_logits, y)


def depth_loss(pred: torch.Tensor, gt: Optional[torch.Tensor]) -> torch.Tensor:
    """Mean ``|ln pred - ln gt|``; a missing ground truth contributes 0."""
    if gt is None or gt.numel() == 0:
        return pred.sum() * 0.0
    gt = torch.as_tensor(gt, dtype=pred.dtype)
    if gt.shape != pred.shape:
        raise InvalidArgumentError(f"depth shapes differ: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    return (torch.log(pred) - torch.log(gt)).abs().mean()


def reconstruction_loss(reconstructed, original) -> torch.Tensor:
    a, b = torch.as_tensor(reconstructed), torch.as_tensor(original)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"reconstruction shape {tuple(a.shape)} != image shape {tuple(b.shape)}")
    return (a - b.to(a.dtype)).abs().mean()


UNMATCHED_PENALTY = 1.0


def consistency_loss(foggy_boxes: torch.Tensor, clear_boxes, foggy_probs: torch.Tensor,
                     clear_labels, n_unmatched_clear: int, image_hw) -> torch.Tensor:
    """Agreement between matched foggy/clear detections plus a penalty per missed clear detection.

    Each matched pair contributes the smooth L1 of its box corners divided by
    image width/height, plus the cross-entropy of the foggy class distribution
    against the clear-view class. The sum is divided by the number of pairs
    plus unmatched clear detections.
    """
    n_pairs = int(foggy_boxes.shape[0])
    denom = n_pairs + int(n_unmatched_clear)
    if denom == 0:
        return foggy_boxes.sum() * 0.0
    total = foggy_boxes.new_tensor(UNMATCHED_PENALTY * n_unmatched_clear)
    if n_pairs:
        h, w = image_hw
        scale = foggy_boxes.new_tensor([w, h, w, h])
        cb = torch.as_tensor(np.asarray(clear_boxes), dtype=foggy_boxes.dtype).reshape(-1, 4)
        x = (foggy_boxes - cb) / scale
        ax = x.abs()
        box_term = torch.where(ax < 1.0, 0.5 * x * x, ax - 0.5).mean(dim=1)
        lab = torch.as_tensor(np.asarray(clear_labels), dtype=torch.int64)
        p = foggy_probs[torch.arange(n_pairs), lab].clamp_min(1e-12)
        total = total + (box_term - torch.log(p)).sum()
    return total / denom


def regulating_term(model: nn.Module) -> torch.Tensor:
    """Half the squared L2 norm of all weight matrices and kernels.

    Biases and normalization scales (all 1-d parameters) are excluded.
    """
    terms = [p.pow(2).sum() for name, p in model.named_parameters() if p.requires_grad and p.dim() > 1]
    if not terms:
        return torch.zeros(())
    return 0.5 * torch.stack(terms).sum()


def composite_loss(parts: LossBreakdown, weights: LossWeights) -> LossBreakdown:
    """Fill in ``parts.total``; components whose weight is 0 are left out of the sum."""
    if not isinstance(weights, LossWeights):
        raise InvalidArgumentError("weights must be LossWeights")
    for name in PART_NAMES:
        v = _to_float(getattr(parts, name))
        if not math.isfinite(v):
            raise NumericError(name, v)
        if v < 0:
            raise InvalidArgumentError(f"loss component {name} is negative ({v})")
    total = parts.rpn_cls + parts.rpn_reg + parts.roi_cls + parts.roi_reg
    for part, wname in _AUX:
        w = getattr(weights, wname)
        if w != 0.0:
            total = total + w * getattr(parts, part)
    parts.total = total
    return parts
