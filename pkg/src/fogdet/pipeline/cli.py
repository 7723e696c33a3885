"""Command-line entry point: ``fogdet <command> [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 data validation
error, 3 numeric failure during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..core import FogDetError, InvalidArgumentError, default_categories
from ..evalbench import (PUBLISHED_ROWS, ComparisonRow, EvalReport, TimingReport, comparison_table,
                         rows_from_json, save_pr_plot, timing_benchmark)
from ..fogsynth import FogParams, synthesize_foggy_sample
from ..losses import NumericError
from .checkpoint import CheckpointError, load_checkpoint
from .config import TrainConfig, desk_config, load_config, save_config
from .manifest import ManifestError, export_samples, load_manifest, read_image, split_dataset
from .synthetic import fog_samples, make_corpus
from .trainer import TrainingAborted, evaluate_model, model_from_checkpoint, train

log = logging.getLogger("fogdet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(FogDetError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _global_flags() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the command from being reset by the subparser.
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON file mirroring TrainConfig")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--deterministic", action="store_true", default=argparse.SUPPRESS,
                   help="single-threaded, fixed-order execution")
    p.add_argument("--out-dir", type=Path, default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = _Parser(prog="fogdet", description="Fog-adaptive two-stage object detection.", parents=[common])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="train a detector")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--source", type=Path, help="labelled source manifest (split into train/valid/test)")
    src.add_argument("--synthetic", type=int, metavar="N", help="generate an N-image synthetic source corpus")
    p.add_argument("--target", type=Path, help="unlabelled target manifest (foggy images, optional clear views)")
    p.add_argument("--synthetic-target", type=int, default=80, metavar="N",
                   help="fogged synthetic target images when --synthetic is used (default 80)")
    p.add_argument("--profile", choices=("default", "desk"), default="default",
                   help="base settings before --config; 'desk' is the small CPU model")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--source-only", action="store_true", help="zero all auxiliary loss weights")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("eval", parents=[common], help="mAP@0.5 of a checkpoint on a manifest")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--teacher", action="store_true", help="evaluate the EMA teacher weights")
    p.add_argument("--iou", type=float, default=0.5)

    p = sub.add_parser("detect", parents=[common], help="detect objects in one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--teacher", action="store_true")

    p = sub.add_parser("synthfog", parents=[common], help="fog every image of a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--beta", type=float, default=FogParams.beta)
    p.add_argument("--airlight", type=float, nargs="+", default=None, metavar="A",
                   help="one value or three per-channel values in [0, 1]")
    p.add_argument("--default-depth", type=float, default=FogParams.default_depth)
    p.add_argument("--out-manifest", type=Path, required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic clear-weather corpus")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--out-manifest", type=Path, required=True)

    p = sub.add_parser("bench", parents=[common], help="per-image detection latency")
    p.add_argument("--checkpoint", type=Path, help="model to time (default: untrained model of --profile)")
    p.add_argument("--profile", choices=("default", "desk"), default="desk")
    p.add_argument("--manifest", type=Path, help="images to time (default: synthetic)")
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--repeats", type=int, default=1)

    p = sub.add_parser("compare", parents=[common], help="method comparison table")
    p.add_argument("--rows", type=Path, help="JSON rows to use instead of the published ones")
    p.add_argument("--add", nargs=3, action="append", default=[], metavar=("METHOD", "NATURE", "REPORT"),
                   help="append a row whose accuracy is the mAP of an eval report JSON")
    return parser


def _out_dir(args) -> Path:
    out = Path(getattr(args, "out_dir", None) or "fogdet_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _append_jsonl(path: Path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(record) + "\n")


def _config(args, profile: str = "default") -> TrainConfig:
    base = desk_config() if profile == "desk" else TrainConfig()
    overrides = dict(seed=getattr(args, "seed", None),
                     deterministic=True if getattr(args, "deterministic", False) else None,
                     epochs=getattr(args, "epochs", None), batch_size=getattr(args, "batch_size", None),
                     lr=getattr(args, "lr", None))
    cfg = load_config(getattr(args, "config", None), base=base, **overrides)
    if getattr(args, "source_only", False):
        from ..losses import LossWeights
        cfg = cfg.with_overrides(loss_weights=LossWeights.detection_only())
    return cfg


def cmd_train(args) -> int:
    cfg = _config(args, args.profile)
    out = _out_dir(args)
    if args.synthetic is not None:
        if args.synthetic < 3:
            raise InvalidArgumentError("--synthetic needs at least 3 images")
        source = make_corpus(args.synthetic, seed=cfg.seed, num_classes=cfg.num_classes)
        target = fog_samples(make_corpus(args.synthetic_target, seed=cfg.seed + 1000,
                                         num_classes=cfg.num_classes, prefix="tgt"), cfg.fog)
        if args.target is not None:
            _, target = load_manifest(args.target, cfg.num_classes)
    else:
        _, source = load_manifest(args.source, cfg.num_classes)
        target = load_manifest(args.target, cfg.num_classes)[1] if args.target else []
    tr, va, te = split_dataset(source, cfg.split, cfg.seed)
    save_config(cfg, out / "config.json")
    metrics = out / "metrics.jsonl"
    log.info("train %d / valid %d / test %d source images, %d target images", len(tr), len(va), len(te),
             len(target))
    res = train(cfg, tr, target, valid=va or None, out_dir=out / "checkpoints", metrics_path=metrics,
                resume=args.resume)
    summary = {"kind": "summary", "epochs": len(res.history["epochs"])}
    splits = [("valid", va), ("test", te)]
    if te and cfg.fog is not None:
        splits.append(("test_foggy", [synthesize_foggy_sample(s, cfg.fog) for s in te]))
    names = {c.id: c.name for c in default_categories(cfg.num_classes)}
    for name, split in splits:
        if split and any(s.annotations for s in split):
            report, curves = evaluate_model(res.model, split, return_curves=True)
            _append_jsonl(metrics, {"kind": "eval", "split": name, **report.to_dict()})
            save_pr_plot(curves, out / f"pr_{name}.png", names)
            summary[f"{name}_mAP"] = report.mAP
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary))
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ck, args.teacher)
    manifest, samples = load_manifest(args.manifest, cfg.num_classes)
    report, curves = evaluate_model(model, samples, args.iou, return_curves=True)
    record = {"kind": "eval", "checkpoint": str(args.checkpoint), "manifest": str(args.manifest),
              **report.to_dict()}
    _append_jsonl(out / "metrics.jsonl", record)
    (out / "eval_report.json").write_text(json.dumps(report.to_dict(), indent=2))
    save_pr_plot(curves, out / "pr_curve.png", {c.id: c.name for c in manifest.categories})
    print(f"mAP@{args.iou:g} = {report.mAP:.4f} over {report.num_images} images")
    return EXIT_OK


def draw_overlay(image: np.ndarray, detections, path: Path) -> None:
    from PIL import Image, ImageDraw

    arr = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
    im = Image.fromarray(arr)
    draw = ImageDraw.Draw(im)
    for d in detections:
        color = tuple(int(c) for c in np.array(
            [(d.category.id * 97) % 255, (d.category.id * 57 + 128) % 255, (d.category.id * 31 + 64) % 255]))
        draw.rectangle(d.box.as_tuple(), outline=color, width=2)
        draw.text((d.box.x1 + 2, d.box.y1 + 1), f"{d.category.name} {d.score:.2f}", fill=color)
    im.save(path)


def cmd_detect(args) -> int:
    from ..detector.model import detect

    out = _out_dir(args)
    ck = load_checkpoint(args.checkpoint)
    model, cfg = model_from_checkpoint(ck, args.teacher)
    try:
        image = read_image(args.image)
    except OSError as exc:
        raise ManifestError([(str(args.image), f"cannot read image: {exc}")])
    dets = detect(image, model.detector, score_threshold=args.score_threshold)
    stem = args.image.stem
    records = [{"bbox": list(d.box.as_tuple()), "category_id": d.category.id, "category": d.category.name,
                "score": d.score} for d in dets]
    (out / f"{stem}_detections.json").write_text(json.dumps({"image": str(args.image), "detections": records},
                                                            indent=2))
    draw_overlay(image, dets, out / f"{stem}_overlay.png")
    print(f"{len(dets)} detections -> {out / (stem + '_detections.json')}")
    return EXIT_OK


def cmd_synthfog(args) -> int:
    airlight = args.airlight if args.airlight is not None else list(FogParams.airlight)
    if len(airlight) == 1:
        airlight = airlight * 3
    if len(airlight) != 3:
        raise InvalidArgumentError("--airlight takes one or three values")
    params = FogParams(args.beta, tuple(airlight), args.default_depth)
    manifest, samples = load_manifest(args.manifest)
    foggy = [synthesize_foggy_sample(s, params) for s in samples]
    out = args.out_manifest
    path = export_samples(foggy, out.parent, manifest.categories, out.name)
    print(f"wrote {len(foggy)} foggy images -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    seed = getattr(args, "seed", 0)
    samples = make_corpus(args.count, seed=seed, size=args.size)
    path = export_samples(samples, args.out_manifest.parent, manifest_name=args.out_manifest.name)
    print(f"wrote {len(samples)} images -> {path}")
    return EXIT_OK


def cmd_bench(args) -> int:
    import torch

    from ..detector.model import ArchConfig, DetectorModel

    out = _out_dir(args)
    if getattr(args, "deterministic", False):
        torch.set_num_threads(1)
    if args.checkpoint is not None:
        model = model_from_checkpoint(load_checkpoint(args.checkpoint))[0].detector
    else:
        torch.manual_seed(getattr(args, "seed", 0))
        model = DetectorModel(ArchConfig.desk() if args.profile == "desk" else ArchConfig()).eval()
    if args.manifest is not None:
        images = [s.image for s in load_manifest(args.manifest)[1]]
    else:
        images = [s.image for s in make_corpus(args.count, seed=getattr(args, "seed", 0))]
    if not images:
        raise ManifestError([("<manifest>", "no images to time")])
    report = timing_benchmark(model, images, warmup=args.warmup, repeats=args.repeats)
    path = out / "timing.json"
    path.write_text(json.dumps(report.to_dict(), indent=2))
    TimingReport.from_dict(json.loads(path.read_text()))
    print(f"{len(report.latencies_ms)} images: mean {report.mean_ms:.2f} ms, median {report.median_ms:.2f} ms, "
          f"p95 {report.p95_ms:.2f} ms ({report.hardware})")
    return EXIT_OK


def cmd_compare(args) -> int:
    out = _out_dir(args)
    if args.rows is not None:
        try:
            rows = rows_from_json(args.rows.read_text())
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"cannot read rows from {args.rows}: {exc}") from exc
    else:
        rows = list(PUBLISHED_ROWS)
    for method, nature, report_path in args.add:
        try:
            report = EvalReport.from_dict(json.loads(Path(report_path).read_text()))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise InvalidArgumentError(f"cannot read eval report {report_path}: {exc}") from exc
        rows.append(ComparisonRow(method, nature, round(100.0 * report.mAP, 1)))
    text, _ = comparison_table(rows, out / "comparison")
    print(text, end="")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "detect": cmd_detect, "synthfog": cmd_synthfog,
            "synth": cmd_synth, "bench": cmd_bench, "compare": cmd_compare}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"fogdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ManifestError as exc:
        print(f"fogdet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingAborted, NumericError) as exc:
        print(f"fogdet: numeric failure: {exc}", file=sys.stderr)
        if isinstance(exc, TrainingAborted) and exc.last_breakdown:
            print(json.dumps(exc.last_breakdown), file=sys.stderr)
        return EXIT_NUMERIC
    except (InvalidArgumentError, CheckpointError, UsageError, FileNotFoundError) as exc:
        print(f"fogdet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
