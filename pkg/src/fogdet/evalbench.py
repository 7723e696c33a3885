"""Detection metrics, latency profiling and method comparison reports.

Headline accuracy everywhere in this package is mAP at IoU 0.5.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .core import InvalidArgumentError


@dataclass
class MatchResult:
    tp: np.ndarray          # per detection, in input order
    matched_gt: np.ndarray  # gt index per detection or -1
    scores: np.ndarray
    labels: np.ndarray

    @property
    def num_tp(self) -> int:
        return int(self.tp.sum())


def match_detections(det_boxes, det_scores, det_labels, gt_boxes, gt_labels,
                     iou_threshold: float = 0.5) -> MatchResult:
    """Greedy matching in descending score order (ties: lower index first).

    Each detection takes the highest-IoU still-unmatched gt of its class with
    IoU >= ``iou_threshold``; otherwise it is a false positive.
    """
    det_boxes = np.asarray(det_boxes, dtype=np.float64).reshape(-1, 4)
    det_scores = np.asarray(det_scores, dtype=np.float64).reshape(-1)
    det_labels = np.asarray(det_labels, dtype=np.int64).reshape(-1)
    order = np.argsort(-det_scores, kind="stable")
    tp_sorted, gt_sorted = kernels.greedy_match(det_boxes[order], det_labels[order],
                                                gt_boxes, gt_labels, iou_threshold)
    tp = np.zeros(len(order), dtype=bool)
    matched = np.full(len(order), -1, dtype=np.int64)
    tp[order] = tp_sorted
    matched[order] = gt_sorted
    return MatchResult(tp, matched, det_scores, det_labels)


def average_precision(scores, tp_flags, num_gt: int) -> Optional[float]:
    """All-point interpolated AP; ``None`` when there is no ground truth."""
    if num_gt < 0:
        raise InvalidArgumentError("num_gt must be >= 0")
    if num_gt == 0:
        return None
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    tp = np.asarray(tp_flags, dtype=bool).reshape(-1)
    if tp.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall])
    mpre = np.concatenate([[0.0], precision])
    # precision envelope: running max from the right
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_ap(per_class_ap) -> float:
    vals = [v for v in (per_class_ap.values() if isinstance(per_class_ap, dict) else per_class_ap)
            if v is not None]
    if not vals:
        raise InvalidArgumentError("no class with a defined AP")
    return float(np.mean(vals))


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    mAP: float
    accuracy: float
    num_images: int
    num_gt: int
    num_detections: int
    iou_threshold: float = 0.5
    metric: str = "mAP@0.5"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_class_ap"] = {str(k): v for k, v in self.per_class_ap.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        d = dict(d)
        d["per_class_ap"] = {int(k): float(v) for k, v in d["per_class_ap"].items()}
        return cls(**d)


def evaluate_detections(detections: Sequence, ground_truth: Sequence,
                        iou_threshold: float = 0.5, return_curves: bool = False):
    """Dataset-level AP per class.

    ``detections[i]`` is ``(boxes, scores, labels)`` for image ``i`` and
    ``ground_truth[i]`` is ``(boxes, labels)``. Only classes present in the
    ground truth get an AP.
    """
    if len(detections) != len(ground_truth):
        raise InvalidArgumentError("detections and ground truth lengths differ")
    all_scores, all_tp, all_labels = [], [], []
    gt_count: dict[int, int] = {}
    n_det = 0
    for (db, ds, dl), (gb, gl) in zip(detections, ground_truth):
        gl = np.asarray(gl, dtype=np.int64).reshape(-1)
        for k in gl:
            gt_count[int(k)] = gt_count.get(int(k), 0) + 1
        m = match_detections(db, ds, dl, gb, gl, iou_threshold)
        all_scores.append(m.scores)
        all_tp.append(m.tp)
        all_labels.append(m.labels)
        n_det += len(m.scores)
    scores = np.concatenate(all_scores) if all_scores else np.zeros(0)
    tps = np.concatenate(all_tp) if all_tp else np.zeros(0, dtype=bool)
    labels = np.concatenate(all_labels) if all_labels else np.zeros(0, dtype=np.int64)
    per_class, curves = {}, {}
    for k in sorted(gt_count):
        sel = labels == k
        per_class[k] = average_precision(scores[sel], tps[sel], gt_count[k])
        if return_curves:
            curves[k] = pr_curve(scores[sel], tps[sel], gt_count[k])
    m_ap = mean_ap(per_class) if per_class else 0.0
    report = EvalReport(per_class, m_ap, m_ap, len(detections), sum(gt_count.values()), n_det, iou_threshold)
    return (report, curves) if return_curves else report


def pr_curve(scores, tp_flags, num_gt: int):
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    tp = np.asarray(tp_flags, dtype=bool)[order]
    ctp, cfp = np.cumsum(tp), np.cumsum(~tp)
    return ctp / max(num_gt, 1), ctp / np.maximum(ctp + cfp, 1)


@dataclass
class TimingReport:
    latencies_ms: list[float]
    mean_ms: float
    median_ms: float
    p95_ms: float
    hardware: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TimingReport":
        return cls(**d)

    @classmethod
    def from_latencies(cls, latencies_ms: Sequence[float], hardware: str = "") -> "TimingReport":
        lat = [float(v) for v in latencies_ms]
        if not lat:
            raise InvalidArgumentError("no latencies")
        return cls(lat, statistics.fmean(lat), statistics.median(lat),
                   float(np.percentile(lat, 95)), hardware)


def hardware_note() -> str:
    import os
    import platform

    import torch
    return (f"{platform.machine()} {platform.processor() or 'cpu'}; {os.cpu_count()} logical cpus; "
            f"torch {torch.__version__} ({torch.get_num_threads()} threads); kernels={kernels.BACKEND}")


def timing_benchmark(model, images: Sequence, warmup: int = 5, repeats: int = 1,
                     detect_fn=None) -> TimingReport:
    """Wall-clock latency of ``detect`` per image (best of ``repeats``), run serially."""
    if len(images) == 0:
        raise InvalidArgumentError("timing_benchmark needs at least one image")
    if detect_fn is None:
        from .detector import detect as detect_fn
    for i in range(warmup):
        detect_fn(images[i % len(images)], model)
    latencies = []
    for img in images:
        best = float("inf")
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            detect_fn(img, model)
            best = min(best, (time.perf_counter() - t0) * 1e3)
        latencies.append(best)
    return TimingReport.from_latencies(latencies, hardware_note())


@dataclass(frozen=True)
class ComparisonRow:
    method: str
    nature: str
    accuracy: float
    timing_ms: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 100.0:
            raise InvalidArgumentError(f"accuracy {self.accuracy} outside [0, 100]")


# Published comparison (accuracy in percent); no timings were reported.
PUBLISHED_ROWS = (
    ComparisonRow("DAFerRCNN", "FerRCNN + DA", 75.4),
    ComparisonRow("FerRCNN-OpCV", "FerRCNN + OpenCV", 78.4),
    ComparisonRow("FerRCNN-DpRc", "FerRCNN + DepthRecons", 82.1),
    ComparisonRow("Proposed method", "FerRCNN + DA + ResNet", 85.2),
)


def render_table(rows: Sequence[ComparisonRow]) -> str:
    if not rows:
        raise InvalidArgumentError("comparison needs at least one row")
    with_time = any(r.timing_ms is not None for r in rows)
    header = ["Method", "Nature", "Accuracy (mAP@0.5, %)"] + (["Time (ms)"] if with_time else [])
    body = []
    for r in rows:
        cells = [r.method, r.nature, repr(float(r.accuracy))]
        if with_time:
            cells.append("-" if r.timing_ms is None else repr(float(r.timing_ms)))
        body.append(cells)
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    fmt = lambda cells: " | ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep] + [fmt(c) for c in body]) + "\n"


def rows_to_json(rows: Sequence[ComparisonRow]) -> str:
    return json.dumps({"metric": "mAP@0.5 (%)", "rows": [asdict(r) for r in rows]}, indent=2)


def rows_from_json(text: str) -> list[ComparisonRow]:
    return [ComparisonRow(**r) for r in json.loads(text)["rows"]]


def comparison_table(rows: Sequence[ComparisonRow], out_path: Optional[Path] = None) -> tuple[str, str]:
    """Render ``rows`` in the given order; returns ``(text, json)`` and writes both if ``out_path``."""
    rows = list(rows)
    text = render_table(rows)
    machine = rows_to_json(rows)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.with_suffix(".txt").write_text(text)
        out_path.with_suffix(".json").write_text(machine)
    return text, machine


def parse_table(text: str) -> list[ComparisonRow]:
    """Inverse of :func:`render_table`."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    with_time = "Time (ms)" in lines[0]
    rows = []
    for ln in lines[2:]:
        cells = [c.strip() for c in ln.split(" | ")]
        timing = None
        if with_time and len(cells) > 3 and cells[3] != "-":
            timing = float(cells[3])
        rows.append(ComparisonRow(cells[0], cells[1], float(cells[2]), timing))
    return rows


def save_pr_plot(curves: dict, path, class_names: Optional[dict] = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for k, (rec, prec) in curves.items():
        name = class_names.get(k, str(k)) if class_names else str(k)
        ax.plot(np.concatenate([[0.0], rec]), np.concatenate([[1.0], prec]), label=name)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
