"""Anchors, box-delta parameterization and RPN target assignment."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch

from ..core import BBox, InvalidArgumentError
from .. import kernels

DELTA_CLAMP = 4.0


def _as_boxes(b) -> np.ndarray:
    if isinstance(b, BBox):
        return b.as_array()
    return np.asarray(b, dtype=np.float64)


def generate_anchors(h_f: int, w_f: int, stride: float,
                     scales: Sequence[float], aspects: Sequence[float]) -> np.ndarray:
    """Return ``(h_f * w_f * len(scales) * len(aspects), 4)`` anchors.

    Rows are ordered by cell (row-major), then scale, then aspect. ``aspect``
    is height / width, and every anchor of scale ``s`` has area ``s**2``.
    """
    if len(scales) == 0 or len(aspects) == 0:
        raise InvalidArgumentError("scales and aspects must be non-empty")
    base = []
    for s in scales:
        for r in aspects:
            w = s / math.sqrt(r)
            h = s * math.sqrt(r)
            base.append((-w / 2, -h / 2, w / 2, h / 2))
    base = np.array(base, dtype=np.float64)
    cy = (np.arange(h_f, dtype=np.float64) + 0.5) * stride
    cx = (np.arange(w_f, dtype=np.float64) + 0.5) * stride
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    shifts = np.stack([cxx, cyy, cxx, cyy], axis=-1).reshape(-1, 1, 4)
    return (shifts + base[None]).reshape(-1, 4)


def _center_size(b: np.ndarray):
    w = b[..., 2] - b[..., 0]
    h = b[..., 3] - b[..., 1]
    return b[..., 0] + 0.5 * w, b[..., 1] + 0.5 * h, w, h


def encode_deltas(anchor, gt) -> np.ndarray:
    """``(tx, ty, tw, th)`` taking ``anchor`` onto ``gt``; broadcasts over rows."""
    ax, ay, aw, ah = _center_size(_as_boxes(anchor))
    gx, gy, gw, gh = _center_size(_as_boxes(gt))
    return np.stack([(gx - ax) / aw, (gy - ay) / ah, np.log(gw / aw), np.log(gh / ah)], axis=-1)


def decode_deltas(anchor, deltas) -> np.ndarray:
    ax, ay, aw, ah = _center_size(_as_boxes(anchor))
    d = np.asarray(deltas, dtype=np.float64)
    cx = ax + d[..., 0] * aw
    cy = ay + d[..., 1] * ah
    w = aw * np.exp(np.clip(d[..., 2], -DELTA_CLAMP, DELTA_CLAMP))
    h = ah * np.exp(np.clip(d[..., 3], -DELTA_CLAMP, DELTA_CLAMP))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=-1)


def decode_deltas_torch(anchor: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of :func:`decode_deltas` (gradient flows into ``deltas``)."""
    aw = anchor[..., 2] - anchor[..., 0]
    ah = anchor[..., 3] - anchor[..., 1]
    ax = anchor[..., 0] + 0.5 * aw
    ay = anchor[..., 1] + 0.5 * ah
    cx = ax + deltas[..., 0] * aw
    cy = ay + deltas[..., 1] * ah
    w = aw * torch.exp(deltas[..., 2].clamp(-DELTA_CLAMP, DELTA_CLAMP))
    h = ah * torch.exp(deltas[..., 3].clamp(-DELTA_CLAMP, DELTA_CLAMP))
    return torch.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], dim=-1)


POSITIVE, NEGATIVE, IGNORE = 1, 0, -1


def assign_rpn_targets(anchors: np.ndarray, gt_boxes: np.ndarray,
                       iou_pos: float = 0.7, iou_neg: float = 0.3):
    """Label anchors positive (1), negative (0) or ignored (-1).

    Returns ``(labels, deltas)`` where ``deltas`` is ``(N, 4)`` and only
    meaningful on positive rows. Besides the ``iou_pos`` rule, the best
    anchor(s) of each gt are positive whenever that best IoU is non-zero.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    if anchors.shape[0] == 0:
        raise InvalidArgumentError("anchors must be non-empty")
    n = anchors.shape[0]
    deltas = np.zeros((n, 4), dtype=np.float64)
    if gt_boxes.shape[0] == 0:
        return np.full(n, NEGATIVE, dtype=np.int64), deltas
    ious = kernels.iou_matrix(anchors, gt_boxes)
    best_gt = ious.argmax(axis=1)
    best_iou = ious[np.arange(n), best_gt]
    labels = np.full(n, IGNORE, dtype=np.int64)
    labels[best_iou < iou_neg] = NEGATIVE
    labels[best_iou >= iou_pos] = POSITIVE
    gt_best = ious.max(axis=0)
    forced = np.where((ious == gt_best[None, :]) & (gt_best[None, :] > 0))[0]
    labels[forced] = POSITIVE
    pos = labels == POSITIVE
    deltas[pos] = encode_deltas(anchors[pos], gt_boxes[best_gt[pos]])
    return labels, deltas
