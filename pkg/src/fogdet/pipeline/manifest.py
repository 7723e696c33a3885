"""JSON dataset manifests and dataset splitting.

A manifest looks like::

    {"categories": [{"id": 0, "name": "car"}, ...],
     "images": [{"id": "scene00001", "path": "images/scene00001.png",
                 "width": 128, "height": 128, "domain": "source",
                 "depth_path": "depth/scene00001.npy",
                 "clear_path": null,
                 "annotations": [{"bbox": [x1, y1, x2, y2], "category_id": 0}]}]}

Relative paths resolve against the manifest's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from ..core import (Annotation, BBox, CategoryLabel, DomainTag, FogDetError, InvalidArgumentError,
                    Sample, default_categories, validate_sample)


class ManifestError(FogDetError):
    """Manifest could not be loaded; ``violations`` lists ``(sample_id, message)`` pairs."""

    def __init__(self, violations: list[tuple[str, str]]):
        self.violations = violations
        lines = "; ".join(f"{sid}: {msg}" for sid, msg in violations[:20])
        more = f" (+{len(violations) - 20} more)" if len(violations) > 20 else ""
        super().__init__(f"invalid manifest: {lines}{more}")


@dataclass
class Manifest:
    categories: list[CategoryLabel]
    records: list[dict] = field(default_factory=list)
    root: Path = Path(".")

    def to_json(self) -> dict:
        return {"categories": [{"id": c.id, "name": c.name} for c in self.categories],
                "images": self.records}


def canonical_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True)


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_image(path: Path, image: np.ndarray) -> None:
    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_manifest(path, num_classes: Optional[int] = None) -> tuple[Manifest, list[Sample]]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError([("<manifest>", f"file not found: {path}")])
    except json.JSONDecodeError as exc:
        raise ManifestError([("<manifest>", f"parse error: {exc}")])
    try:
        cats = [CategoryLabel(int(c["id"]), str(c["name"])) for c in data.get("categories", [])]
        records = list(data["images"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError([("<manifest>", f"malformed manifest: {exc}")])
    if not cats:
        cats = default_categories(num_classes or 6)
    if sorted(c.id for c in cats) != list(range(len(cats))):
        raise ManifestError([("<manifest>", "category ids must be dense 0..K-1")])
    n_cls = num_classes or len(cats)
    by_id = {c.id: c for c in cats}
    root = path.parent
    violations: list[tuple[str, str]] = []
    samples: list[Sample] = []
    seen: set[str] = set()
    for rec in records:
        sid = str(rec.get("id", rec.get("path", "?")))
        try:
            if sid in seen:
                raise ValueError("duplicate id")
            seen.add(sid)
            anns = []
            for a in rec.get("annotations", []):
                cid = int(a["category_id"])
                cat = by_id.get(cid, CategoryLabel(cid, f"class_{cid}"))
                anns.append(Annotation(BBox.from_seq(a["bbox"]), cat))
            img = read_image(root / rec["path"])
            if img.shape[1:] != (int(rec["height"]), int(rec["width"])):
                raise ValueError(f"image is {img.shape[2]}x{img.shape[1]}, record says "
                                 f"{rec['width']}x{rec['height']}")
            depth = np.load(root / rec["depth_path"]) if rec.get("depth_path") else None
            clear = read_image(root / rec["clear_path"]) if rec.get("clear_path") else None
            s = Sample(img, tuple(anns), DomainTag(rec.get("domain", "source")), sid, depth, clear)
        except KeyError as exc:
            violations.append((sid, f"missing field {exc}"))
            continue
        except (TypeError, ValueError, OSError, FogDetError) as exc:
            violations.append((sid, str(exc)))
            continue
        violations.extend((sid, v) for v in validate_sample(s, n_cls))
        samples.append(s)
    if violations:
        raise ManifestError(violations)
    return Manifest(cats, records, root), samples


def write_manifest(manifest: Manifest, path) -> None:
    Path(path).write_text(canonical_json(manifest.to_json()))


def export_samples(samples: Sequence[Sample], out_dir, categories=None, manifest_name: str = "manifest.json") -> Path:
    """Write images, depth maps and a manifest for ``samples`` under ``out_dir``."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        rec = {"id": s.id, "path": f"images/{s.id}.png", "width": s.width, "height": s.height,
               "domain": s.domain.value,
               "annotations": [{"bbox": list(a.box.as_tuple()), "category_id": a.category.id}
                               for a in s.annotations]}
        write_image(out_dir / rec["path"], s.image)
        if s.depth is not None:
            (out_dir / "depth").mkdir(exist_ok=True)
            rec["depth_path"] = f"depth/{s.id}.npy"
            np.save(out_dir / rec["depth_path"], np.asarray(s.depth, dtype=np.float32))
        if s.clear_view is not None:
            rec["clear_path"] = f"images/{s.id}_clear.png"
            write_image(out_dir / rec["clear_path"], s.clear_view)
        records.append(rec)
    cats = categories or default_categories(
        max((a.category.id for s in samples for a in s.annotations), default=5) + 1)
    path = out_dir / manifest_name
    write_manifest(Manifest(list(cats), records, out_dir), path)
    return path


def split_dataset(samples: Sequence, fractions=(0.8, 0.1, 0.1), seed: int = 0):
    """Deterministic shuffle, then ``floor(n * f)`` for valid/test; the remainder goes to train."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or any(f < 0 for f in fractions):
        raise InvalidArgumentError(f"fractions must be 3 non-negative values summing to 1: {fractions}")
    n = len(samples)
    if n < 3 and all(f > 0 for f in fractions):
        raise InvalidArgumentError(f"cannot split {n} samples three ways")
    order = np.random.default_rng(seed).permutation(n)
    n_valid = int(np.floor(n * fractions[1] + 1e-9))
    n_test = int(np.floor(n * fractions[2] + 1e-9))
    n_train = n - n_valid - n_test
    pick = lambda idx: [samples[i] for i in idx]
    return (pick(order[:n_train]), pick(order[n_train:n_train + n_valid]),
            pick(order[n_train + n_valid:]))
