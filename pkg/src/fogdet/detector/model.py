"""Residual backbone, region proposal network and ROI classification head."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..core import (MIN_IMAGE_SIDE, BBox, Detection, InvalidArgumentError,
                    default_categories)
from .boxes import decode_deltas, generate_anchors
from .ops import nms, propose, roi_pool

STRIDE = 16


@dataclass(frozen=True)
class ArchConfig:
    num_classes: int = 6
    stem_channels: int = 32
    stage_channels: tuple[int, ...] = (32, 64, 128, 256)
    out_channels: int = 256
    rpn_channels: int = 256
    anchor_scales: tuple[float, ...] = (32.0, 64.0, 128.0)
    anchor_aspects: tuple[float, ...] = (0.5, 1.0, 2.0)
    pooled_size: int = 7
    head_hidden: int = 512

    @property
    def stride(self) -> int:
        return STRIDE

    @property
    def anchors_per_cell(self) -> int:
        return len(self.anchor_scales) * len(self.anchor_aspects)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        for k in ("stage_channels", "anchor_scales", "anchor_aspects"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @classmethod
    def desk(cls, num_classes: int = 6) -> "ArchConfig":
        """Small network for CPU-scale experiments on 128 px images."""
        return cls(num_classes=num_classes, stem_channels=16, stage_channels=(16, 32, 64, 64),
                   out_channels=64, rpn_channels=64, anchor_scales=(24.0, 40.0, 64.0),
                   anchor_aspects=(0.5, 1.0, 2.0), pooled_size=6, head_hidden=256)


def _norm(channels: int) -> nn.GroupNorm:
    # per-sample normalization; batch statistics would couple source and target images
    groups = 8 if channels % 8 == 0 else 1
    return nn.GroupNorm(groups, channels)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.norm2 = _norm(cout)
        self.shortcut = None
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), _norm(cout))

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        identity = x if self.shortcut is None else self.shortcut(x)
        return F.relu(out + identity)


class Backbone(nn.Module):
    """Stem (stride 2) plus four residual stages with strides 2, 2, 2, 1."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, cfg.stem_channels, 3, 2, 1, bias=False),
                                  _norm(cfg.stem_channels), nn.ReLU())
        stages, cin = [], cfg.stem_channels
        for cout, s in zip(cfg.stage_channels, (2, 2, 2, 1)):
            stages.append(BasicBlock(cin, cout, s))
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.proj = nn.Conv2d(cin, cfg.out_channels, 1)

    def forward(self, x):
        return F.relu(self.proj(self.stages(self.stem(x))))


class RPN(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        a = cfg.anchors_per_cell
        self.conv = nn.Conv2d(cfg.out_channels, cfg.rpn_channels, 3, 1, 1)
        self.cls = nn.Conv2d(cfg.rpn_channels, a, 1)
        self.reg = nn.Conv2d(cfg.rpn_channels, 4 * a, 1)

    def forward(self, f):
        h = F.relu(self.conv(f))
        b, _, hf, wf = f.shape
        logits = self.cls(h).permute(0, 2, 3, 1).reshape(b, -1)
        deltas = self.reg(h).view(b, -1, 4, hf, wf).permute(0, 3, 4, 1, 2).reshape(b, -1, 4)
        return logits, deltas


class Head(nn.Module):
    def __init__(self, cfg: ArchConfig):
        super().__init__()
        k = cfg.num_classes
        self.fc1 = nn.Linear(cfg.out_channels * cfg.pooled_size ** 2, cfg.head_hidden)
        self.fc2 = nn.Linear(cfg.head_hidden, cfg.head_hidden)
        self.cls = nn.Linear(cfg.head_hidden, k + 1)
        self.reg = nn.Linear(cfg.head_hidden, 4 * k)

    def forward(self, pooled):
        h = F.relu(self.fc1(pooled.flatten(1)))
        h = F.relu(self.fc2(h))
        return self.cls(h), self.reg(h).view(pooled.shape[0], -1, 4)


class DetectorModel(nn.Module):
    def __init__(self, cfg: Optional[ArchConfig] = None):
        super().__init__()
        self.cfg = cfg or ArchConfig()
        self.backbone = Backbone(self.cfg)
        self.rpn = RPN(self.cfg)
        self.head = Head(self.cfg)
        self._anchor_cache: dict = {}
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.Linear):
                nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
                nn.init.zeros_(m.bias)
        for layer in (self.rpn.cls, self.rpn.reg):
            nn.init.normal_(layer.weight, std=0.01)
        nn.init.normal_(self.head.cls.weight, std=0.01)
        nn.init.normal_(self.head.reg.weight, std=0.001)

    def anchors(self, h_f: int, w_f: int) -> np.ndarray:
        key = (h_f, w_f)
        if key not in self._anchor_cache:
            self._anchor_cache[key] = generate_anchors(h_f, w_f, self.cfg.stride,
                                                       self.cfg.anchor_scales, self.cfg.anchor_aspects)
        return self._anchor_cache[key]


def feature_size(height: int, width: int, stride: int = STRIDE) -> tuple[int, int]:
    return -(-height // stride), -(-width // stride)


def _as_batch(image) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(image)) if not isinstance(image, torch.Tensor) else image
    return t.unsqueeze(0) if t.dim() == 3 else t


def backbone_forward(image, model: DetectorModel) -> torch.Tensor:
    """Map ``(3, H, W)`` or ``(B, 3, H, W)`` images to stride-16 features."""
    x = _as_batch(image)
    if x.shape[-1] < model.cfg.stride or x.shape[-2] < model.cfg.stride:
        raise InvalidArgumentError(f"image {tuple(x.shape[-2:])} smaller than one stride")
    param = next(model.parameters())
    return model.backbone(x.to(param.dtype))


def rpn_forward(f: torch.Tensor, model: DetectorModel):
    """Return ``(logits, objectness, deltas)`` with one row per anchor."""
    if f.dim() != 4 or f.shape[1] != model.cfg.out_channels:
        raise InvalidArgumentError(f"feature shape {tuple(f.shape)} does not match config "
                                   f"({model.cfg.out_channels} channels)")
    logits, deltas = model.rpn(f)
    return logits, torch.sigmoid(logits), deltas


def head_forward(pooled: torch.Tensor, model: DetectorModel):
    """Return ``(logits, probabilities, refinements)``; background is the last class."""
    c, p = model.cfg.out_channels, model.cfg.pooled_size
    if pooled.dim() != 4 or tuple(pooled.shape[1:]) != (c, p, p):
        raise InvalidArgumentError(f"pooled shape {tuple(pooled.shape)} does not match ({c}, {p}, {p})")
    logits, refinements = model.head(pooled)
    return logits, torch.softmax(logits, dim=1), refinements


@dataclass
class ImageProposals:
    boxes: np.ndarray
    scores: np.ndarray


def proposals_for_batch(model: DetectorModel, objectness: torch.Tensor, deltas: torch.Tensor,
                        feat_hw: tuple[int, int], image_hw: tuple[int, int],
                        pre_nms_k: int = 2000, post_nms_k: int = 300, nms_iou: float = 0.7):
    anchors = model.anchors(*feat_hw)
    obj = objectness.detach().cpu().double().numpy()
    dl = deltas.detach().cpu().double().numpy()
    out = []
    for b in range(obj.shape[0]):
        boxes, scores = propose(obj[b], dl[b], anchors, image_hw, pre_nms_k, post_nms_k, nms_iou)
        out.append(ImageProposals(boxes, scores))
    return out


def postprocess(boxes: np.ndarray, probs: np.ndarray, refinements: np.ndarray, image_hw,
                score_threshold: float, nms_iou: float, max_dets: int, return_rois: bool = False):
    """Per-class decode, threshold and NMS.

    Returns ``(boxes, scores, labels)`` sorted by descending score, plus the
    index of the source proposal of each detection when ``return_rois``.
    """
    height, width = image_hw
    num_classes = refinements.shape[1]
    parts = []
    for k in range(num_classes):
        sel = np.where(probs[:, k] >= score_threshold)[0]
        if sel.size == 0:
            continue
        decoded = decode_deltas(boxes[sel], refinements[sel, k])
        decoded[:, 0::2] = np.clip(decoded[:, 0::2], 0, width)
        decoded[:, 1::2] = np.clip(decoded[:, 1::2], 0, height)
        ok = (decoded[:, 2] > decoded[:, 0]) & (decoded[:, 3] > decoded[:, 1])
        decoded, sc, src = decoded[ok], probs[sel, k][ok], sel[ok]
        kept = nms(decoded, sc, nms_iou)
        parts.append((decoded[kept], sc[kept], np.full(len(kept), k, dtype=np.int64), src[kept]))
    if not parts:
        empty = (np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))
        return empty if return_rois else empty[:3]
    b, s, lab, src = (np.concatenate(x) for x in zip(*parts))
    order = np.lexsort((lab, -s))[:max_dets]
    out = (b[order], s[order], lab[order], src[order])
    return out if return_rois else out[:3]


@torch.no_grad()
def detect_batch(images, model: DetectorModel, score_threshold: float = 0.5, nms_iou: float = 0.5,
                 max_dets: int = 100, pre_nms_k: int = 2000, post_nms_k: int = 300,
                 rpn_nms_iou: float = 0.7, features: Optional[torch.Tensor] = None,
                 return_rois: bool = False):
    """Array-level detection for a batch of equally sized images.

    Returns one ``(boxes, scores, labels)`` triple per image; with
    ``return_rois`` a fourth element holds the proposal box behind each
    detection. ``features`` skips the backbone when already computed.
    """
    x = _as_batch(images)
    f = backbone_forward(x, model) if features is None else features
    _, obj, deltas = rpn_forward(f, model)
    image_hw = (x.shape[-2], x.shape[-1])
    props = proposals_for_batch(model, obj, deltas, tuple(f.shape[-2:]), image_hw,
                                pre_nms_k, post_nms_k, rpn_nms_iou)
    results = []
    for b, p in enumerate(props):
        if len(p.boxes) == 0:
            empty = (np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64), np.zeros((0, 4)))
            results.append(empty if return_rois else empty[:3])
            continue
        rois = np.concatenate([np.full((len(p.boxes), 1), b), p.boxes], axis=1)
        pooled = roi_pool(f, rois, model.cfg.stride, model.cfg.pooled_size)
        _, probs, refine = head_forward(pooled, model)
        out = postprocess(p.boxes, probs.double().numpy(), refine.double().numpy(),
                          image_hw, score_threshold, nms_iou, max_dets, return_rois)
        if return_rois:
            out = out[:3] + (p.boxes[out[3]],)
        results.append(out)
    return results


def detect(image, model: DetectorModel, score_threshold: float = 0.5, nms_iou: float = 0.5,
           max_dets: int = 100, categories=None) -> list[Detection]:
    """Run the full two-stage pipeline on one ``(3, H, W)`` image."""
    x = _as_batch(image)
    if x.shape[0] != 1:
        raise InvalidArgumentError("detect takes a single image; use detect_batch for batches")
    if min(x.shape[-2:]) < MIN_IMAGE_SIDE:
        raise InvalidArgumentError(f"image {tuple(x.shape[-2:])} smaller than {MIN_IMAGE_SIDE} px")
    cats = categories or default_categories(model.cfg.num_classes)
    boxes, scores, labels = detect_batch(x, model, score_threshold, nms_iou, max_dets)[0]
    return [Detection(BBox.from_seq(b), cats[int(k)], float(min(max(s, 0.0), 1.0)))
            for b, s, k in zip(boxes, scores, labels)]
