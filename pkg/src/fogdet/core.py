"""Shared geometry, label and sample types.

Boxes are corner-form ``(x1, y1, x2, y2)`` in continuous pixel coordinates
with the origin at the top-left corner. Area is ``(x2 - x1) * (y2 - y1)``;
there is no ``+1`` pixel correction anywhere in the package.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_CLASS_NAMES = ("car", "truck", "bus", "person", "bicycle", "motorcycle")
MIN_IMAGE_SIDE = 32


class FogDetError(Exception):
    """Base class for errors raised by this package."""


class InvalidArgumentError(FogDetError, ValueError):
    pass


class EmptyBoxError(InvalidArgumentError):
    """Raised when clipping leaves no area inside the image."""


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise InvalidArgumentError(f"non-finite box coordinates {coords}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise InvalidArgumentError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    @classmethod
    def from_seq(cls, seq: Sequence[float]) -> "BBox":
        x1, y1, x2, y2 = (float(v) for v in seq)
        return cls(x1, y1, x2, y2)


@dataclass(frozen=True)
class CategoryLabel:
    id: int
    name: str


def default_categories(num_classes: int = 6) -> list[CategoryLabel]:
    names = list(DEFAULT_CLASS_NAMES[:num_classes])
    names += [f"class_{i}" for i in range(len(names), num_classes)]
    return [CategoryLabel(i, n) for i, n in enumerate(names)]


@dataclass(frozen=True)
class Annotation:
    box: BBox
    category: CategoryLabel


@dataclass(frozen=True)
class Detection:
    box: BBox
    category: CategoryLabel
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError(f"score {self.score} outside [0, 1]")


class DomainTag(str, enum.Enum):
    SOURCE = "source"
    TARGET = "target"


@dataclass(frozen=True, eq=False)
class Sample:
    """One image with its labels.

    ``image`` is a float array of shape ``(3, H, W)`` with values in [0, 1];
    ``depth`` (meters) has shape ``(H, W)``. ``clear_view`` is only set on
    synthesized foggy samples and holds the fog-free image of the same scene.
    """

    image: np.ndarray
    annotations: tuple[Annotation, ...]
    domain: DomainTag
    id: str
    depth: Optional[np.ndarray] = None
    clear_view: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])

    def gt_boxes(self) -> np.ndarray:
        if not self.annotations:
            return np.zeros((0, 4), dtype=np.float64)
        return np.array([a.box.as_tuple() for a in self.annotations], dtype=np.float64)

    def gt_labels(self) -> np.ndarray:
        return np.array([a.category.id for a in self.annotations], dtype=np.int64)


def box_iou(a: BBox, b: BBox) -> float:
    for box in (a, b):
        if not (box.x2 > box.x1 and box.y2 > box.y1):
            raise InvalidArgumentError(f"degenerate box {box}")
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def clip_box(box: BBox, width: float, height: float) -> BBox:
    if not (width > 0 and height > 0):
        raise InvalidArgumentError("image size must be positive")
    x1 = min(max(box.x1, 0.0), width)
    y1 = min(max(box.y1, 0.0), height)
    x2 = min(max(box.x2, 0.0), width)
    y2 = min(max(box.y2, 0.0), height)
    if not (x1 < x2 and y1 < y2):
        raise EmptyBoxError(f"box {box.as_tuple()} lies outside {width}x{height} image")
    return BBox(x1, y1, x2, y2)


def clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Vectorized clamp of an ``(N, 4)`` array; degenerate rows are kept."""
    out = np.array(boxes, dtype=np.float64, copy=True)
    out[:, 0::2] = np.clip(out[:, 0::2], 0.0, width)
    out[:, 1::2] = np.clip(out[:, 1::2], 0.0, height)
    return out


def validate_sample(s: Sample, num_classes: int = 6) -> list[str]:
    """Return every invariant violation of ``s``; an empty list means ok."""
    problems: list[str] = []
    img = np.asarray(s.image)
    if img.ndim != 3 or img.shape[0] != 3:
        problems.append(f"image shape {img.shape} is not (3, H, W)")
        return problems
    _, h, w = img.shape
    if h < MIN_IMAGE_SIDE or w < MIN_IMAGE_SIDE:
        problems.append(f"image {h}x{w} smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0.0 or img.max(initial=0.0) > 1.0:
        problems.append("image values outside [0, 1]")
    for k, ann in enumerate(s.annotations):
        b = ann.box
        if not (0 <= ann.category.id < num_classes):
            problems.append(f"annotation {k}: label out of range ({ann.category.id})")
        if b.x1 < 0 or b.y1 < 0 or b.x2 > w or b.y2 > h:
            problems.append(f"annotation {k}: box {b.as_tuple()} outside image bounds")
    if s.depth is not None:
        d = np.asarray(s.depth)
        if d.shape != (h, w):
            problems.append(f"depth size mismatch: depth {d.shape} vs image {(h, w)}")
        elif not np.all(np.isfinite(d)) or np.any(d <= 0):
            problems.append("depth values must be finite and strictly positive")
    if s.clear_view is not None and np.asarray(s.clear_view).shape != img.shape:
        problems.append("clear view shape differs from image")
    return problems
