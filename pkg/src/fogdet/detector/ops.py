"""NMS, max ROI pooling and proposal generation."""
from __future__ import annotations

import numpy as np
import torch

from .. import kernels
from ..core import BBox, clip_boxes
from .boxes import decode_deltas


def nms(boxes, scores, iou_threshold: float) -> np.ndarray:
    """Greedy NMS; returns kept indices in descending-score order.

    A box is kept iff its IoU with every previously kept box is below
    ``iou_threshold``. Equal scores are visited in ascending index order.
    ``boxes`` may also be a sequence of ``BBox``.
    """
    if len(boxes) and isinstance(boxes[0], BBox):
        boxes = [b.as_tuple() for b in boxes]
    arr = np.asarray(boxes, dtype=np.float64)
    if arr.size == 0:
        return np.zeros(0, dtype=np.int64)
    return kernels.nms(arr.reshape(-1, 4), np.asarray(scores, dtype=np.float64), float(iou_threshold))


class _RoIPool(torch.autograd.Function):
    @staticmethod
    def forward(ctx, features, rois, stride, pooled):
        feats = features.detach().contiguous().numpy()
        out, argmax = kernels.roi_pool_forward(feats, rois, float(stride), int(pooled))
        ctx.save_for_backward(torch.from_numpy(argmax), torch.as_tensor(rois[:, 0], dtype=torch.int64))
        ctx.feat_shape = features.shape
        return torch.from_numpy(out)

    @staticmethod
    def backward(ctx, grad_out):
        argmax, batch_idx = ctx.saved_tensors
        n_img, channels, height, width = ctx.feat_shape
        grad_in = torch.zeros(n_img * channels * height * width, dtype=grad_out.dtype)
        valid = argmax >= 0
        c_idx = torch.arange(channels).view(1, -1, 1, 1).expand_as(argmax)
        b_idx = batch_idx.view(-1, 1, 1, 1).expand_as(argmax)
        flat = (b_idx * channels + c_idx) * (height * width) + argmax
        grad_in.index_add_(0, flat[valid], grad_out.contiguous()[valid])
        return grad_in.view(n_img, channels, height, width), None, None, None


def roi_pool(features: torch.Tensor, rois, stride: float, pooled: int) -> torch.Tensor:
    """Max-pool each ROI into a ``pooled x pooled`` grid.

    ``features`` is ``(B, C, H, W)``; ``rois`` is ``(R, 5)`` rows of
    ``(batch_index, x1, y1, x2, y2)`` in image pixels (``(R, 4)`` means batch 0).
    ROI coordinates are divided by ``stride`` and bin ``p`` covers feature
    cells ``floor(lo) .. ceil(hi) - 1``; bins falling outside the map are 0.
    """
    rois = np.asarray(rois, dtype=np.float64)
    if rois.ndim == 2 and rois.shape[1] == 4:
        rois = np.concatenate([np.zeros((len(rois), 1)), rois], axis=1)
    rois = rois.reshape(-1, 5)
    if features.dim() == 3:
        features = features.unsqueeze(0)
    return _RoIPool.apply(features, rois, stride, pooled)


def propose(objectness, deltas, anchors, image_size, pre_nms_k: int = 2000,
            post_nms_k: int = 300, nms_iou: float = 0.7, min_size: float = 1e-3):
    """Turn scored anchors into proposals for one image.

    ``image_size`` is ``(height, width)``. Returns ``(boxes, scores)`` with at
    most ``post_nms_k`` rows, every box inside the image.
    """
    height, width = image_size
    objectness = np.asarray(objectness, dtype=np.float64).reshape(-1)
    boxes = clip_boxes(decode_deltas(anchors, deltas), width, height)
    keep = ((boxes[:, 2] - boxes[:, 0]) > min_size) & ((boxes[:, 3] - boxes[:, 1]) > min_size)
    boxes, scores = boxes[keep], objectness[keep]
    order = np.argsort(-scores, kind="stable")[:pre_nms_k]
    boxes, scores = boxes[order], scores[order]
    kept = kernels.nms(boxes, scores, nms_iou)[:post_nms_k]
    return boxes[kept], scores[kept]
