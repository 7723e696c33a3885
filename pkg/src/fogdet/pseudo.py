"""EMA teacher, pseudo-label thresholding and clear/foggy detection pairing."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn

from .core import Annotation, Detection, InvalidArgumentError
from . import kernels


@dataclass(frozen=True)
class PseudoLabelConfig:
    confidence_threshold: float = 0.8
    ema_momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 < self.confidence_threshold < 1.0:
            raise InvalidArgumentError("confidence_threshold must lie in (0, 1)")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise InvalidArgumentError("ema_momentum must lie in [0, 1)")


def make_teacher(student: nn.Module) -> nn.Module:
    teacher = copy.deepcopy(student)
    for p in teacher.parameters():
        p.requires_grad_(False)
    return teacher.eval()


@torch.no_grad()
def ema_update(teacher: nn.Module, student: nn.Module, m: float) -> nn.Module:
    """``teacher <- m * teacher + (1 - m) * student`` for every parameter, in place."""
    if not 0.0 <= m < 1.0:
        raise InvalidArgumentError("momentum must lie in [0, 1)")
    t_params = dict(teacher.named_parameters())
    s_params = dict(student.named_parameters())
    if t_params.keys() != s_params.keys():
        raise InvalidArgumentError("teacher and student parameter sets differ")
    for name, tp in t_params.items():
        sp = s_params[name]
        if tp.shape != sp.shape:
            raise InvalidArgumentError(f"shape mismatch for {name}: {tuple(tp.shape)} vs {tuple(sp.shape)}")
        if m == 0.0:
            tp.copy_(sp)
        else:
            tp.mul_(m).add_(sp, alpha=1.0 - m)
    return teacher


def generate_pseudo_labels(detections: Sequence[Detection], tau: float) -> list[Annotation]:
    return [Annotation(d.box, d.category) for d in detections if d.score >= tau]


def pseudo_label_mask(scores: np.ndarray, tau: float) -> np.ndarray:
    return np.asarray(scores) >= tau


@dataclass
class Pairing:
    pairs: list[tuple[int, int]]
    unmatched_clear: list[int]
    unmatched_foggy: list[int]


def consistency_pairs(clear_boxes, clear_scores, clear_labels,
                      foggy_boxes, foggy_scores, foggy_labels, iou_match: float = 0.5) -> Pairing:
    """Greedy one-to-one pairing of clear-view and foggy-view detections.

    Candidate pairs share a class and have IoU >= ``iou_match``. They are
    accepted in order of descending score product, then descending IoU, then
    ascending ``(clear, foggy)`` index; a detection joins at most one pair.
    """
    cb = np.asarray(clear_boxes, dtype=np.float64).reshape(-1, 4)
    fb = np.asarray(foggy_boxes, dtype=np.float64).reshape(-1, 4)
    cs, fs = np.asarray(clear_scores, dtype=np.float64), np.asarray(foggy_scores, dtype=np.float64)
    cl, fl = np.asarray(clear_labels), np.asarray(foggy_labels)
    n, m = len(cb), len(fb)
    pairs: list[tuple[int, int]] = []
    if n and m:
        ious = kernels.iou_matrix(cb, fb)
        ci, fi = np.where((cl[:, None] == fl[None, :]) & (ious >= iou_match))
        prod = cs[ci] * fs[fi]
        order = np.lexsort((fi, ci, -ious[ci, fi], -prod))
        used_c = np.zeros(n, dtype=bool)
        used_f = np.zeros(m, dtype=bool)
        for k in order:
            i, j = ci[k], fi[k]
            if used_c[i] or used_f[j]:
                continue
            used_c[i] = used_f[j] = True
            pairs.append((int(i), int(j)))
    matched_c = {i for i, _ in pairs}
    matched_f = {j for _, j in pairs}
    return Pairing(pairs,
                   [i for i in range(n) if i not in matched_c],
                   [j for j in range(m) if j not in matched_f])
