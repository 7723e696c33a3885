"""One optimization step, split into a non-differentiable plan and a differentiable pass.

The plan fixes every discrete decision (anchor and ROI sampling, pseudo
labels, clear/foggy pairing). Given a plan, :func:`forward_parts` is a
deterministic, piecewise-smooth function of the parameters, which is what the
finite-difference gradient check relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .. import kernels
from ..adapt import (AdaptHeads, discriminate_domain, downsample_depth, estimate_depth,
                     reconstruct_image)
from ..core import DomainTag, Sample
from ..detector.boxes import assign_rpn_targets, decode_deltas_torch, encode_deltas
from ..detector.model import (ArchConfig, DetectorModel, backbone_forward, detect_batch,
                              head_forward, proposals_for_batch, rpn_forward)
from ..detector.ops import roi_pool
from ..losses import (LossBreakdown, LossWeights, adversarial_domain_loss, consistency_loss,
                      depth_loss, reconstruction_loss, regulating_term, roi_head_loss, rpn_loss,
                      sample_anchors)
from ..pseudo import consistency_pairs
from .config import TrainConfig


class AdaptiveDetector(nn.Module):
    """Detector plus optional adaptation heads; ``heads is None`` is the plain detector."""

    def __init__(self, arch: ArchConfig, adaptation: bool = True, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.detector = DetectorModel(arch)
        self.heads: Optional[AdaptHeads] = None
        if adaptation:
            # separate stream so detector initialization does not depend on the heads
            torch.manual_seed(seed + 7919)
            self.heads = AdaptHeads(arch.out_channels, arch.stride)


@dataclass
class Batch:
    images: torch.Tensor              # source images first, then target (foggy) images
    n_source: int
    gt_boxes: list[np.ndarray]        # per source image
    gt_labels: list[np.ndarray]
    depths: list[Optional[np.ndarray]]
    clear_views: Optional[torch.Tensor] = None  # one per target image

    @property
    def n_target(self) -> int:
        return self.images.shape[0] - self.n_source

    @property
    def image_hw(self) -> tuple[int, int]:
        return int(self.images.shape[-2]), int(self.images.shape[-1])


def make_batch(source: Sequence[Sample], target: Sequence[Sample] = (),
               dtype=torch.float32) -> Batch:
    """Stack samples; target annotations are never read."""
    imgs = [s.image for s in source] + [s.image for s in target]
    images = torch.as_tensor(np.stack(imgs), dtype=dtype)
    clear = None
    if target:
        clear = torch.as_tensor(np.stack([s.clear_view if s.clear_view is not None else s.image
                                          for s in target]), dtype=dtype)
    return Batch(images, len(source), [s.gt_boxes() for s in source], [s.gt_labels() for s in source],
                 [s.depth for s in source], clear)


@dataclass
class DetTargets:
    """Supervision for the detection losses over a subset of batch images."""

    rpn_labels: np.ndarray   # (B * A,) 1 / 0 / -1, -1 also for images outside the subset
    rpn_deltas: np.ndarray   # (B * A, 4)
    rpn_sampled: np.ndarray  # flat anchor indices
    rois: np.ndarray         # (R, 5) batch index + box
    roi_labels: np.ndarray   # (R,) background = num_classes
    roi_deltas: np.ndarray   # (R, 4)

    @property
    def empty(self) -> bool:
        return len(self.rpn_sampled) == 0 and len(self.rois) == 0


@dataclass
class ConsistencyTargets:
    rois: np.ndarray          # (P, 5) proposal behind each matched foggy detection
    labels: np.ndarray        # (P,)
    clear_boxes: np.ndarray   # (P, 4)
    n_unmatched_clear: int


@dataclass
class StepPlan:
    source: DetTargets
    target: Optional[DetTargets] = None
    consistency: Optional[ConsistencyTargets] = None
    use_adv: bool = False
    use_depth: bool = False
    use_rec: bool = False
    use_cons: bool = False
    use_reg: bool = False
    lam: float = 0.0
    n_pseudo: int = 0
    n_images: int = 0  # images that go through the backbone


def sample_rois(proposals: np.ndarray, gt_boxes: np.ndarray, gt_labels: np.ndarray, num_classes: int,
                rng: np.random.Generator, batch: int = 64, fg_fraction: float = 0.25, fg_iou: float = 0.5,
                foreground_only: bool = False):
    boxes = np.concatenate([proposals.reshape(-1, 4), gt_boxes.reshape(-1, 4)])
    n = len(boxes)
    labels = np.full(n, num_classes, dtype=np.int64)
    deltas = np.zeros((n, 4))
    if len(gt_boxes):
        ious = kernels.iou_matrix(boxes, gt_boxes)
        best = ious.argmax(axis=1)
        best_iou = ious[np.arange(n), best]
        fg = np.where(best_iou >= fg_iou)[0]
        bg = np.where(best_iou < fg_iou)[0]
        labels[fg] = gt_labels[best[fg]]
        deltas[fg] = encode_deltas(boxes[fg], gt_boxes[best[fg]])
    else:
        fg = np.zeros(0, dtype=np.int64)
        bg = np.arange(n)
    n_fg = min(len(fg), int(batch * fg_fraction))
    n_bg = 0 if foreground_only else min(len(bg), batch - n_fg)
    if n_fg < len(fg):
        fg = rng.choice(fg, n_fg, replace=False)
    if n_bg < len(bg):
        bg = rng.choice(bg, n_bg, replace=False)
    keep = np.sort(np.concatenate([fg, bg])).astype(np.int64)
    return boxes[keep], labels[keep], deltas[keep]


def build_det_targets(model: DetectorModel, image_indices: Sequence[int], gt_boxes, gt_labels,
                      proposals, n_images: int, feat_hw, cfg: TrainConfig,
                      rng: np.random.Generator, foreground_only: bool = False) -> DetTargets:
    """RPN and ROI targets for the listed images.

    ``foreground_only`` drops negative anchors and background ROIs, for
    incomplete (pseudo) labels where an unlabelled region may be an object.
    """
    anchors = model.anchors(*feat_hw)
    a = len(anchors)
    labels = np.full(n_images * a, -1, dtype=np.int64)
    deltas = np.zeros((n_images * a, 4))
    sampled, rois, roi_labels, roi_deltas = [], [], [], []
    for b, boxes, labs in zip(image_indices, gt_boxes, gt_labels):
        lab, dl = assign_rpn_targets(anchors, boxes)
        if foreground_only:
            lab = np.where(lab == 1, lab, -1)
        labels[b * a:(b + 1) * a] = lab
        deltas[b * a:(b + 1) * a] = dl
        sampled.append(b * a + sample_anchors(lab, rng, cfg.rpn_batch))
        r, rl, rd = sample_rois(proposals[b].boxes, boxes, labs, cfg.num_classes, rng,
                                cfg.roi_batch, cfg.roi_fg_fraction, foreground_only=foreground_only)
        rois.append(np.concatenate([np.full((len(r), 1), b), r], axis=1))
        roi_labels.append(rl)
        roi_deltas.append(rd)
    cat = lambda xs, shape: np.concatenate(xs) if xs else np.zeros(shape)
    return DetTargets(labels, deltas, cat(sampled, (0,)).astype(np.int64), cat(rois, (0, 5)),
                      cat(roi_labels, (0,)).astype(np.int64), cat(roi_deltas, (0, 4)))


def grl_lambda(step: int, total_steps: int, cfg: TrainConfig) -> float:
    warm = cfg.grl_warmup_fraction * total_steps
    if warm <= 0:
        return cfg.grl_max_lambda
    return cfg.grl_max_lambda * min(1.0, step / warm)


def active_terms(model: AdaptiveDetector, weights: LossWeights, adapting: bool, has_target: bool) -> dict:
    heads = model.heads is not None and adapting
    return dict(use_adv=heads and has_target and weights.w_adv > 0,
                use_depth=heads and weights.w_depth > 0,
                use_rec=heads and weights.w_rec > 0,
                use_cons=heads and has_target and weights.w_cons > 0,
                use_reg=heads and weights.reg_strength > 0)


@torch.no_grad()
def make_plan(model: AdaptiveDetector, teacher: Optional[AdaptiveDetector], batch: Batch,
              objectness: torch.Tensor, deltas: torch.Tensor, features: torch.Tensor,
              cfg: TrainConfig, rng: np.random.Generator, flags: dict, lam: float = 0.0) -> StepPlan:
    """``objectness``/``deltas``/``features`` come from the student forward over the
    images that enter the backbone (all of them when target terms are active)."""
    det = model.detector
    n_img = features.shape[0]
    feat_hw = tuple(features.shape[-2:])
    props = proposals_for_batch(det, objectness, deltas, feat_hw, batch.image_hw)
    src = build_det_targets(det, range(batch.n_source), batch.gt_boxes, batch.gt_labels,
                            props, n_img, feat_hw, cfg, rng)
    plan = StepPlan(src, lam=lam, n_images=n_img, **flags)
    if not flags.get("use_cons") or teacher is None or batch.n_target == 0:
        plan.use_cons = False
        return plan
    tau = cfg.pseudo.confidence_threshold
    t_idx = list(range(batch.n_source, batch.n_source + batch.n_target))
    clear_dets = detect_batch(batch.clear_views, teacher.detector, score_threshold=tau)
    foggy_dets = detect_batch(batch.images[batch.n_source:], det,
                              score_threshold=cfg.cons_student_threshold,
                              features=features[batch.n_source:], return_rois=True)
    pseudo_idx, pseudo_boxes, pseudo_labels = [], [], []
    c_rois, c_labels, c_boxes, n_unmatched = [], [], [], 0
    for j, (b, (cb, cs, cl), (fb, fs, fl, fr)) in enumerate(zip(t_idx, clear_dets, foggy_dets)):
        if len(cb):
            pseudo_idx.append(b)
            pseudo_boxes.append(cb)
            pseudo_labels.append(cl)
        pairing = consistency_pairs(cb, cs, cl, fb, fs, fl, cfg.cons_iou)
        n_unmatched += len(pairing.unmatched_clear)
        for ci, fi in pairing.pairs:
            c_rois.append(np.concatenate([[b], fr[fi]]))
            c_labels.append(cl[ci])
            c_boxes.append(cb[ci])
    if pseudo_idx:
        plan.target = build_det_targets(det, pseudo_idx, pseudo_boxes, pseudo_labels, props,
                                        n_img, feat_hw, cfg, rng)
        plan.n_pseudo = int(sum(len(x) for x in pseudo_boxes))
    plan.consistency = ConsistencyTargets(
        np.array(c_rois).reshape(-1, 5), np.array(c_labels, dtype=np.int64),
        np.array(c_boxes).reshape(-1, 4), n_unmatched)
    return plan


def detection_parts(det: DetectorModel, f: torch.Tensor, logits: torch.Tensor,
                    deltas: torch.Tensor, t: DetTargets):
    rpn_cls, rpn_reg = rpn_loss(logits.reshape(-1), deltas.reshape(-1, 4), t.rpn_labels,
                                t.rpn_deltas, t.rpn_sampled)
    if len(t.rois):
        pooled = roi_pool(f, t.rois, det.cfg.stride, det.cfg.pooled_size)
        cls_logits, _, refine = head_forward(pooled, det)
        roi_cls, roi_reg = roi_head_loss(cls_logits, refine, t.roi_labels, t.roi_deltas)
    else:
        roi_cls = roi_reg = f.sum() * 0.0
    return rpn_cls, rpn_reg, roi_cls, roi_reg


def forward_parts(model: AdaptiveDetector, batch: Batch, plan: StepPlan,
                  features: Optional[torch.Tensor] = None, rpn_out=None,
                  depth_scale: float = 10.0) -> LossBreakdown:
    det, heads = model.detector, model.heads
    images = batch.images[:plan.n_images]
    f = backbone_forward(images, det) if features is None else features
    if rpn_out is None:
        logits, _, deltas = rpn_forward(f, det)
    else:
        logits, deltas = rpn_out
    parts = LossBreakdown(*detection_parts(det, f, logits, deltas, plan.source))
    if plan.use_adv:
        is_target = np.arange(plan.n_images) >= batch.n_source
        parts.adv = adversarial_domain_loss(discriminate_domain(f, heads, plan.lam), is_target)
    if plan.use_depth:
        have = [i for i, d in enumerate(batch.depths) if d is not None]
        if have:
            gt = torch.as_tensor(np.stack([batch.depths[i] for i in have]), dtype=f.dtype)
            gt = downsample_depth(gt, det.cfg.stride)
            pred = estimate_depth(f[have], heads, depth_scale)
            parts.depth = depth_loss(pred, gt)
    if plan.use_rec:
        parts.rec = reconstruction_loss(reconstruct_image(f, heads, batch.image_hw), images.to(f.dtype))
    if plan.use_cons:
        cons = f.sum() * 0.0
        if plan.target is not None:
            cons = cons + sum(detection_parts(det, f, logits, deltas, plan.target))
        c = plan.consistency
        if c is not None and (len(c.rois) or c.n_unmatched_clear):
            if len(c.rois):
                pooled = roi_pool(f, c.rois, det.cfg.stride, det.cfg.pooled_size)
                _, probs, refine = head_forward(pooled, det)
                idx = torch.arange(len(c.rois))
                rois = torch.as_tensor(c.rois[:, 1:], dtype=f.dtype)
                boxes = decode_deltas_torch(rois, refine[idx, torch.as_tensor(c.labels)])
            else:
                probs = f.new_zeros((0, det.cfg.num_classes + 1))
                boxes = f.new_zeros((0, 4))
            cons = cons + consistency_loss(boxes, c.clear_boxes, probs, c.labels,
                                           c.n_unmatched_clear, batch.image_hw)
        parts.cons = cons
    if plan.use_reg:
        parts.reg = regulating_term(model)
    return parts
