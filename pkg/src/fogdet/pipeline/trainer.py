"""Two-phase training loop and checkpoint-level evaluation."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from ..core import FogDetError, InvalidArgumentError, Sample
from ..detector.model import backbone_forward, detect_batch, rpn_forward
from ..evalbench import EvalReport, evaluate_detections
from ..losses import NumericError, composite_loss
from ..pseudo import ema_update, make_teacher
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .objective import (AdaptiveDetector, active_terms, forward_parts, grl_lambda, make_batch,
                        make_plan)

log = logging.getLogger(__name__)

EVAL_SCORE_THRESHOLD = 0.05


class TrainingAborted(FogDetError):
    def __init__(self, message: str, last_breakdown: Optional[dict] = None):
        super().__init__(message)
        self.last_breakdown = last_breakdown


@dataclass
class TrainResult:
    model: AdaptiveDetector
    teacher: Optional[AdaptiveDetector]
    checkpoint: Checkpoint
    history: dict = field(default_factory=dict)


def _snapshot(state: dict) -> dict:
    return {k: v.detach().clone() for k, v in state.items()}


def set_determinism(cfg: TrainConfig) -> None:
    torch.manual_seed(cfg.seed)
    if cfg.deterministic:
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _epoch_batches(n_src: int, n_tgt: int, cfg: TrainConfig, phase: int, rng: np.random.Generator,
                   tgt_cursor: list):
    """Yield ``(source_indices, target_indices)`` for one epoch."""
    order = rng.permutation(n_src)
    if phase == 1 or n_tgt == 0:
        for i in range(0, n_src, cfg.batch_size):
            yield order[i:i + cfg.batch_size], np.zeros(0, dtype=np.int64)
        return
    n_s = math.ceil(cfg.batch_size / 2)
    n_t = cfg.batch_size - n_s
    for i in range(0, n_src, n_s):
        t_idx = []
        for _ in range(n_t):
            if tgt_cursor[1] >= len(tgt_cursor[0]):
                tgt_cursor[0] = rng.permutation(n_tgt)
                tgt_cursor[1] = 0
            t_idx.append(tgt_cursor[0][tgt_cursor[1]])
            tgt_cursor[1] += 1
        yield order[i:i + n_s], np.array(t_idx, dtype=np.int64)


def steps_per_epoch(n_src: int, n_tgt: int, cfg: TrainConfig, phase: int) -> int:
    if phase == 1 or n_tgt == 0:
        return math.ceil(n_src / cfg.batch_size)
    return math.ceil(n_src / math.ceil(cfg.batch_size / 2))


def burn_in_epochs(cfg: TrainConfig) -> int:
    return int(math.floor(cfg.burn_in_fraction * cfg.epochs + 1e-9))


def _make_optimizer(model, cfg: TrainConfig):
    params = [p for p in model.parameters() if p.requires_grad]
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr)
    return torch.optim.SGD(params, lr=cfg.lr, momentum=cfg.momentum)


def train(cfg: TrainConfig, source: Sequence[Sample], target: Sequence[Sample] = (),
          valid: Optional[Sequence[Sample]] = None, out_dir: Optional[Path] = None,
          metrics_path: Optional[Path] = None, resume: Optional[Path] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Burn-in on labelled source data, then joint adaptation with target images.

    Target annotations are never used. Returns the trained student, the EMA
    teacher (if pseudo-labelling ran) and the final checkpoint.
    """
    if len(source) == 0:
        raise InvalidArgumentError("source set is empty")
    set_determinism(cfg)
    dtype = torch.float32
    model = AdaptiveDetector(cfg.arch, cfg.adaptation, cfg.seed)
    optimizer = _make_optimizer(model, cfg)
    rng_data = np.random.default_rng([cfg.seed, 1])
    rng_sample = np.random.default_rng([cfg.seed, 2])
    teacher: Optional[AdaptiveDetector] = None
    history: dict = {"epochs": [], "steps": []}
    start_epoch = 0
    tgt_cursor = [np.zeros(0, dtype=np.int64), 0]

    if resume is not None:
        ck = load_checkpoint(resume, cfg.model_hash())
        model.load_state_dict(ck.student)
        if ck.teacher is not None:
            teacher = make_teacher(model)
            teacher.load_state_dict(ck.teacher)
        if ck.optimizer is not None:
            optimizer.load_state_dict(ck.optimizer)
        history = ck.history
        start_epoch = ck.epoch
        if ck.rng_state:
            rng_data.bit_generator.state = ck.rng_state["data"]
            rng_sample.bit_generator.state = ck.rng_state["sample"]
            tgt_cursor = [np.asarray(ck.rng_state["tgt_order"], dtype=np.int64), ck.rng_state["tgt_pos"]]
            torch.set_rng_state(ck.rng_state["torch"])

    n_src, n_tgt = len(source), len(target)
    n_burn = burn_in_epochs(cfg)
    total_steps = sum(steps_per_epoch(n_src, n_tgt, cfg, 1 if e < n_burn else 2) for e in range(cfg.epochs))
    step = sum(steps_per_epoch(n_src, n_tgt, cfg, 1 if e < n_burn else 2) for e in range(start_epoch))
    weights = cfg.loss_weights
    metrics = open(metrics_path, "a") if metrics_path else None
    ckpt = None
    try:
        for epoch in range(start_epoch, cfg.epochs):
            phase = 1 if epoch < n_burn else 2
            lr = cfg.lr * cfg.lr_gamma ** sum(epoch >= m for m in cfg.lr_milestones)
            for group in optimizer.param_groups:
                group["lr"] = lr
            t0 = time.perf_counter()
            det_sum, tot_sum, n_steps = 0.0, 0.0, 0
            for s_idx, t_idx in _epoch_batches(n_src, n_tgt, cfg, phase, rng_data, tgt_cursor):
                flags = active_terms(model, weights, phase == 2, len(t_idx) > 0)
                if flags["use_cons"] and teacher is None:
                    teacher = make_teacher(model)
                needs_target = flags["use_adv"] or flags["use_rec"] or flags["use_cons"]
                batch = make_batch([source[i] for i in s_idx],
                                   [target[i] for i in t_idx] if needs_target else (), dtype)
                lam = grl_lambda(step, total_steps, cfg)
                f = backbone_forward(batch.images, model.detector)
                logits, obj, deltas = rpn_forward(f, model.detector)
                plan = make_plan(model, teacher, batch, obj, deltas, f.detach(), cfg, rng_sample, flags, lam)
                parts = forward_parts(model, batch, plan, f, (logits, deltas), cfg.depth_scale)
                try:
                    composite_loss(parts, weights)
                except NumericError as exc:
                    raise TrainingAborted(str(exc), parts.to_record()) from exc
                optimizer.zero_grad(set_to_none=True)
                parts.total.backward()
                grads = [p for p in model.parameters() if p.grad is not None]
                grad_norm = float(torch.nn.utils.clip_grad_norm_(
                    grads, cfg.grad_clip if cfg.grad_clip > 0 else math.inf))
                optimizer.step()
                if teacher is not None and phase == 2:
                    ema_update(teacher, model, cfg.pseudo.ema_momentum)
                rec = {"kind": "step", "epoch": epoch, "step": step, "phase": phase, "lambda": lam,
                       "n_pseudo": plan.n_pseudo, "grad_norm": grad_norm, **parts.to_record()}
                history["steps"].append(rec)
                if metrics:
                    metrics.write(json.dumps(rec) + "\n")
                det_sum += float(parts.detection.detach())
                tot_sum += float(parts.total.detach())
                n_steps += 1
                step += 1
            ep = {"kind": "epoch", "epoch": epoch, "phase": phase, "lr": lr,
                  "mean_detection": det_sum / max(n_steps, 1), "mean_total": tot_sum / max(n_steps, 1),
                  "seconds": time.perf_counter() - t0}
            if valid:
                ep["valid_mAP"] = evaluate_model(model, valid).mAP
            history["epochs"].append(ep)
            if metrics:
                metrics.write(json.dumps(ep) + "\n")
                metrics.flush()
            log.info("epoch %d phase %d det %.4f total %.4f%s", epoch, phase, ep["mean_detection"],
                     ep["mean_total"], f" valid mAP {ep['valid_mAP']:.3f}" if valid else "")
            if progress:
                progress(ep)
            ckpt = Checkpoint(
                cfg.to_dict(), cfg.model_hash(), _snapshot(model.state_dict()),
                _snapshot(teacher.state_dict()) if teacher is not None else None,
                copy.deepcopy(optimizer.state_dict()), epoch + 1, copy.deepcopy(history),
                {"data": rng_data.bit_generator.state, "sample": rng_sample.bit_generator.state,
                 "tgt_order": tgt_cursor[0].tolist(), "tgt_pos": int(tgt_cursor[1]),
                 "torch": torch.get_rng_state()})
            if out_dir is not None:
                save_checkpoint(ckpt, Path(out_dir) / f"checkpoint_epoch{epoch + 1:03d}.pt")
                save_checkpoint(ckpt, Path(out_dir) / "last.pt")
    finally:
        if metrics:
            metrics.close()
    if ckpt is None:
        ckpt = Checkpoint(cfg.to_dict(), cfg.model_hash(), model.state_dict(), epoch=start_epoch, history=history)
    return TrainResult(model, teacher, ckpt, history)


def model_from_checkpoint(ckpt: Checkpoint, use_teacher: bool = False) -> tuple[AdaptiveDetector, TrainConfig]:
    cfg = TrainConfig.from_dict(ckpt.config)
    if cfg.model_hash() != ckpt.config_hash:
        from .checkpoint import CheckpointConfigError
        raise CheckpointConfigError("stored config does not reproduce the stored hash")
    model = AdaptiveDetector(cfg.arch, cfg.adaptation, cfg.seed)
    state = ckpt.teacher if use_teacher and ckpt.teacher is not None else ckpt.student
    model.load_state_dict(state)
    return model.eval(), cfg


@torch.no_grad()
def predict(model: AdaptiveDetector, samples: Sequence[Sample], score_threshold: float = EVAL_SCORE_THRESHOLD,
            batch_size: int = 10):
    det = model.detector
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        if len({s.image.shape for s in chunk}) == 1:
            imgs = torch.as_tensor(np.stack([s.image for s in chunk]))
            out.extend(detect_batch(imgs, det, score_threshold=score_threshold))
        else:
            for s in chunk:
                out.extend(detect_batch(torch.as_tensor(s.image), det, score_threshold=score_threshold))
    return out


def evaluate_model(model: AdaptiveDetector, samples: Sequence[Sample], iou_threshold: float = 0.5,
                   score_threshold: float = EVAL_SCORE_THRESHOLD, return_curves: bool = False):
    if not any(s.annotations for s in samples):
        raise InvalidArgumentError("evaluation set has no annotations")
    dets = predict(model, samples, score_threshold)
    gts = [(s.gt_boxes(), s.gt_labels()) for s in samples]
    return evaluate_detections(dets, gts, iou_threshold, return_curves)


def evaluate(checkpoint, samples: Sequence[Sample], use_teacher: bool = False, **kw) -> EvalReport:
    """Load ``checkpoint`` (path or :class:`Checkpoint`) and report mAP@0.5 on ``samples``."""
    ck = checkpoint if isinstance(checkpoint, Checkpoint) else load_checkpoint(checkpoint)
    model, _ = model_from_checkpoint(ck, use_teacher)
    return evaluate_model(model, samples, **kw)
