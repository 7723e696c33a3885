"""Time the compiled kernels against the pure-Python fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N] [--json PATH]
"""
from __future__ import annotations

import argparse
import json
import sys
import timeit

import numpy as np

from fogdet import _kernels_py as py

try:
    from fogdet import _kernels as cy
except ImportError:
    cy = None


def random_boxes(rng, n, size=512.0):
    xy = rng.uniform(0, size * 0.8, (n, 2))
    wh = rng.uniform(8, size * 0.2, (n, 2))
    return np.concatenate([xy, xy + wh], axis=1)


def workloads(rng):
    a, b = random_boxes(rng, 300), random_boxes(rng, 50)
    boxes = random_boxes(rng, 2000)
    scores = rng.random(2000)
    feats = rng.standard_normal((2, 64, 32, 32)).astype(np.float32)
    rois = np.concatenate([rng.integers(0, 2, (256, 1)), random_boxes(rng, 256)], axis=1)
    det = random_boxes(rng, 300)
    gt = random_boxes(rng, 60)
    dl, gl = rng.integers(0, 6, 300), rng.integers(0, 6, 60)
    return {
        "iou_matrix 300x50": lambda k: k.iou_matrix(a, b),
        "nms 2000 boxes": lambda k: k.nms(boxes, scores, 0.7),
        "roi_pool 256 rois 7x7": lambda k: k.roi_pool_forward(feats, rois, 16, 7),
        "greedy_match 300 vs 60": lambda k: k.greedy_match(det, dl, gt, gl, 0.5),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    results = []
    print(f"{'kernel':26s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in workloads(rng).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeats)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeats)) * 1e3 if cy else float("nan")
        results.append({"kernel": name, "python_ms": t_py, "cython_ms": t_cy})
        print(f"{name:26s} {t_py:10.3f} {t_cy:10.3f} {t_py / t_cy:8.1f}x")
    if cy is None:
        print("compiled extension not built; only the fallback was timed", file=sys.stderr)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
