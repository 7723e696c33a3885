"""Brute-force reference implementations written from the definitions.

Plain Python loops over floats; nothing here calls into the package.
"""
from __future__ import annotations

import math


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = map(float, a)
    bx1, by1, bx2, by2 = map(float, b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter)


def nms(boxes, scores, thr) -> list[int]:
    """Visit boxes by descending score (lower index first on ties); keep a box
    iff its IoU with every already-kept box is below ``thr``."""
    order = sorted(range(len(boxes)), key=lambda i: (-float(scores[i]), i))
    keep: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[k]) < thr for k in keep):
            keep.append(i)
    return keep


def greedy_match(det_boxes, det_scores, det_labels, gt_boxes, gt_labels, thr):
    """Per detection (input order): True/False and the matched gt index or -1."""
    order = sorted(range(len(det_boxes)), key=lambda i: (-float(det_scores[i]), i))
    taken = [False] * len(gt_boxes)
    tp = [False] * len(det_boxes)
    matched = [-1] * len(det_boxes)
    for d in order:
        best, best_iou = -1, -1.0
        for g in range(len(gt_boxes)):
            if taken[g] or int(gt_labels[g]) != int(det_labels[d]):
                continue
            v = iou(det_boxes[d], gt_boxes[g])
            if v >= thr and v > best_iou:
                best, best_iou = g, v
        if best >= 0:
            taken[best] = True
            tp[d] = True
            matched[d] = best
    return tp, matched


def average_precision(scores, tp, num_gt):
    """Area under the interpolated PR curve: each true positive adds
    ``1/num_gt`` recall at the best precision reached at or beyond its rank."""
    if num_gt == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: (-float(scores[i]), i))
    precisions, hits = [], 0
    for rank, i in enumerate(order, start=1):
        hits += bool(tp[i])
        precisions.append(hits / rank)
    ap = 0.0
    for pos, i in enumerate(order):
        if tp[i]:
            ap += max(precisions[pos:]) / num_gt
    return ap


def roi_pool(features, rois, stride, pooled):
    """features: nested lists [B][C][H][W]; returns [R][C][P][P] values."""
    out = []
    for roi in rois:
        b = int(roi[0])
        x1, y1, x2, y2 = (float(v) / stride for v in roi[1:])
        fmap = features[b]
        height, width = len(fmap[0]), len(fmap[0][0])
        res = []
        for ch in fmap:
            grid = []
            for ph in range(pooled):
                row = []
                for pw in range(pooled):
                    hs = max(math.floor(y1 + ph * (y2 - y1) / pooled), 0)
                    he = min(math.ceil(y1 + (ph + 1) * (y2 - y1) / pooled), height)
                    ws = max(math.floor(x1 + pw * (x2 - x1) / pooled), 0)
                    we = min(math.ceil(x1 + (pw + 1) * (x2 - x1) / pooled), width)
                    vals = [ch[h][w] for h in range(hs, he) for w in range(ws, we)]
                    row.append(max(vals) if vals else 0.0)
                grid.append(row)
            res.append(grid)
        out.append(res)
    return out


def random_box(rng, size=100.0):
    x1, y1 = rng.uniform(0, size * 0.9), rng.uniform(0, size * 0.9)
    return [x1, y1, x1 + rng.uniform(1, size * 0.4), y1 + rng.uniform(1, size * 0.4)]
