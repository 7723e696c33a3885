"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Both modules implement the same arithmetic in the same order so that results
agree bit-for-bit; tests run against whichever backends are importable.
"""
import math

import numpy as np


def iou_matrix(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(inter > 0, inter / union, 0.0)
    return out


def nms(boxes, scores, iou_threshold):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.ascontiguousarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="stable")
    x1, y1, x2, y2 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    areas = (x2 - x1) * (y2 - y1)
    suppressed = np.zeros(len(boxes), dtype=bool)
    keep = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        keep.append(i)
        rest = order[pos + 1:]
        rest = rest[~suppressed[rest]]
        if rest.size == 0:
            continue
        iw = np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest])
        ih = np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest])
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ovr = np.where(inter > 0, inter / (areas[i] + areas[rest] - inter), 0.0)
        suppressed[rest[ovr >= iou_threshold]] = True
    return np.array(keep, dtype=np.int64)


def _bin_range(start, size, p, pooled, limit):
    lo = start + p * size / pooled
    hi = start + (p + 1) * size / pooled
    a = max(int(math.floor(lo)), 0)
    b = min(int(math.ceil(hi)), limit)
    return a, b


def roi_pool_forward(features, rois, stride, pooled):
    features = np.ascontiguousarray(features)
    rois = np.ascontiguousarray(rois, dtype=np.float64).reshape(-1, 5)
    n_img, channels, height, width = features.shape
    n_roi = rois.shape[0]
    out = np.zeros((n_roi, channels, pooled, pooled), dtype=features.dtype)
    argmax = np.full((n_roi, channels, pooled, pooled), -1, dtype=np.int64)
    for r in range(n_roi):
        b = int(rois[r, 0])
        fx1 = rois[r, 1] / stride
        fy1 = rois[r, 2] / stride
        rw = rois[r, 3] / stride - fx1
        rh = rois[r, 4] / stride - fy1
        fmap = features[b].reshape(channels, height * width)
        for ph in range(pooled):
            h0, h1 = _bin_range(fy1, rh, ph, pooled, height)
            for pw in range(pooled):
                w0, w1 = _bin_range(fx1, rw, pw, pooled, width)
                if h0 >= h1 or w0 >= w1:
                    continue
                idx = (np.arange(h0, h1)[:, None] * width + np.arange(w0, w1)[None, :]).reshape(-1)
                vals = fmap[:, idx]
                best = np.argmax(vals, axis=1)
                out[r, :, ph, pw] = vals[np.arange(channels), best]
                argmax[r, :, ph, pw] = idx[best]
    return out, argmax


def greedy_match(det_boxes, det_labels, gt_boxes, gt_labels, iou_threshold):
    det_boxes = np.ascontiguousarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.ascontiguousarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    det_labels = np.asarray(det_labels, dtype=np.int64).reshape(-1)
    gt_labels = np.asarray(gt_labels, dtype=np.int64).reshape(-1)
    n_det = det_boxes.shape[0]
    tp = np.zeros(n_det, dtype=bool)
    matched = np.full(n_det, -1, dtype=np.int64)
    if n_det == 0 or gt_boxes.shape[0] == 0:
        return tp, matched
    ious = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(gt_boxes.shape[0], dtype=bool)
    for d in range(n_det):
        cand = np.where((gt_labels == det_labels[d]) & ~taken & (ious[d] >= iou_threshold))[0]
        if cand.size == 0:
            continue
        g = cand[np.argmax(ious[d, cand])]
        taken[g] = True
        tp[d] = True
        matched[d] = g
    return tp, matched
