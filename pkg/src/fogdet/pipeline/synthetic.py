"""Procedural road scenes with six colored object classes and a perspective depth map."""
from __future__ import annotations

import numpy as np

from ..core import Annotation, BBox, DomainTag, Sample, default_categories, box_iou
from ..fogsynth import FogParams, synthesize_foggy_sample

# (rgb, height/width aspect, shape)
CLASS_STYLE = {
    0: ((0.85, 0.10, 0.10), 0.6, "rect"),       # car
    1: ((0.10, 0.25, 0.85), 1.0, "rect"),       # truck
    2: ((0.95, 0.85, 0.10), 0.5, "rect"),       # bus
    3: ((0.10, 0.75, 0.20), 2.0, "rect"),       # person
    4: ((0.85, 0.15, 0.85), 1.0, "ellipse"),    # bicycle
    5: ((0.10, 0.85, 0.85), 1.0, "triangle"),   # motorcycle
}

HORIZON = 0.35
NEAR_DEPTH = 5.0
SKY_DEPTH = 100.0


def depth_for_row(y: np.ndarray, size: int) -> np.ndarray:
    yh = HORIZON * size
    d = NEAR_DEPTH * (size - yh) / np.maximum(y - yh + 1.0, 1e-6)
    return np.where(y > yh, np.minimum(d, SKY_DEPTH), SKY_DEPTH)


def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    ys = np.arange(size, dtype=np.float64)[:, None] * np.ones((1, size))
    img = np.empty((3, size, size))
    sky = ys < HORIZON * size
    tint = rng.uniform(-0.05, 0.05, 3)
    for c, (top, bottom, road) in enumerate(((0.45, 0.75, 0.35), (0.60, 0.85, 0.35), (0.85, 0.95, 0.38))):
        grad = top + (bottom - top) * ys / (HORIZON * size)
        img[c] = np.where(sky, grad, road + 0.08 * (ys / size)) + tint[c]
    img += rng.normal(0.0, 0.02, img.shape)
    return img


def _paint(img: np.ndarray, depth: np.ndarray, box, color, shape: str, obj_depth: float):
    x1, y1, x2, y2 = (int(round(v)) for v in box)
    yy, xx = np.mgrid[y1:y2, x1:x2]
    if shape == "rect":
        mask = np.ones_like(yy, dtype=bool)
    elif shape == "ellipse":
        cy, cx = (y1 + y2 - 1) / 2, (x1 + x2 - 1) / 2
        mask = ((yy - cy) / max((y2 - y1) / 2, 1)) ** 2 + ((xx - cx) / max((x2 - x1) / 2, 1)) ** 2 <= 1.0
    else:
        frac = (yy - y1 + 0.5) / max(y2 - y1, 1)
        half = frac * (x2 - x1) / 2
        mask = np.abs(xx - (x1 + x2 - 1) / 2) <= half + 0.5
    for c in range(3):
        region = img[c, y1:y2, x1:x2]
        region[mask] = color[c]
    depth[y1:y2, x1:x2][mask] = obj_depth


def make_scene(rng: np.random.Generator, sample_id: str, size: int = 128, num_classes: int = 6,
               max_objects: int = 4, size_range=None) -> Sample:
    """One road scene; object sizes default to 18..50 px at 128 px and scale with ``size``."""
    if size_range is None:
        size_range = (18.0 * size / 128, 50.0 * size / 128)
    cats = default_categories(num_classes)
    img = _background(rng, size)
    rows = np.arange(size, dtype=np.float64)[:, None] * np.ones((1, size))
    depth = depth_for_row(rows, size)
    n_obj = int(rng.integers(1, max_objects + 1))
    placed: list[tuple[BBox, int, float]] = []
    for _ in range(n_obj * 10):
        if len(placed) == n_obj:
            break
        k = int(rng.integers(0, num_classes))
        color, aspect, shape = CLASS_STYLE[k % len(CLASS_STYLE)]
        s = rng.uniform(*size_range)
        w = max(round(s / np.sqrt(aspect)), 8)
        h = max(round(s * np.sqrt(aspect)), 8)
        if w >= size - 2 or h >= size - 2:
            continue
        # nearer (larger) objects stand lower in the frame
        near = (s - size_range[0]) / (size_range[1] - size_range[0])
        bottom = HORIZON * size + 12 + near * (size * (1 - HORIZON) - 14) + rng.uniform(-6, 6)
        bottom = float(np.clip(round(bottom), h + 1, size - 1))
        x1 = float(rng.integers(1, size - w - 1))
        box = BBox(x1, bottom - h, x1 + w, bottom)
        if any(box_iou(box, b) > 0.2 for b, _, _ in placed):
            continue
        obj_depth = float(depth_for_row(np.array([bottom]), size)[0])
        placed.append((box, k, obj_depth))
    # paint far-to-near so nearer objects occlude
    for box, k, d in sorted(placed, key=lambda t: -t[2]):
        color, _, shape = CLASS_STYLE[k % len(CLASS_STYLE)]
        shade = rng.uniform(0.85, 1.0)
        _paint(img, depth, box.as_tuple(), tuple(shade * c for c in color), shape, d)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    anns = tuple(Annotation(b, cats[k]) for b, k, _ in placed)
    return Sample(img, anns, DomainTag.SOURCE, sample_id, depth=depth.astype(np.float32))


def make_corpus(n: int, seed: int, size: int = 128, num_classes: int = 6, prefix: str = "scene") -> list[Sample]:
    rng = np.random.default_rng(seed)
    return [make_scene(rng, f"{prefix}{i:05d}", size, num_classes) for i in range(n)]


def fog_samples(samples, params: FogParams) -> list[Sample]:
    return [synthesize_foggy_sample(s, params) for s in samples]
