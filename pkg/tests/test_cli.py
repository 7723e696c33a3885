"""End-to-end command-line runs on a tiny synthetic corpus."""
import json

import pytest

from fogdet.evalbench import TimingReport, rows_from_json
from fogdet.pipeline import cli
from fogdet.pipeline.trainer import TrainingAborted


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data" / "m.json"
    assert cli.main(["synth", "--count", "20", "--size", "64", "--out-manifest", str(data),
                     "--out-dir", str(root / "s")]) == 0
    out = root / "train"
    assert cli.main(["--seed", "1", "--deterministic", "--out-dir", str(out), "train", "--source", str(data),
                     "--synthetic-target", "6", "--profile", "desk", "--epochs", "2", "--batch-size", "4"]) == 0
    return root, data, out


def test_train_outputs(run):
    _, _, out = run
    recs = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
    kinds = {r["kind"] for r in recs}
    assert {"step", "epoch", "eval"} <= kinds
    assert {r["split"] for r in recs if r["kind"] == "eval"} >= {"test", "test_foggy"}
    assert (out / "pr_test.png").stat().st_size > 0
    assert (out / "pr_test_foggy.png").exists()
    assert (out / "checkpoints" / "last.pt").exists()
    assert json.loads((out / "summary.json").read_text())["epochs"] == 2


def test_eval_appends_metrics(run, tmp_path):
    _, data, out = run
    ck = str(out / "checkpoints" / "last.pt")
    assert cli.main(["--out-dir", str(tmp_path), "eval", "--checkpoint", ck, "--manifest", str(data)]) == 0
    assert cli.main(["--out-dir", str(tmp_path), "eval", "--checkpoint", ck, "--manifest", str(data)]) == 0
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 2
    report = json.loads((tmp_path / "eval_report.json").read_text())
    assert 0.0 <= report["mAP"] <= 1.0
    assert (tmp_path / "pr_curve.png").exists()


def test_detect_writes_overlay(run, tmp_path):
    _, data, out = run
    image = next((data.parent / "images").glob("*.png"))
    assert cli.main(["--out-dir", str(tmp_path), "detect", "--checkpoint", str(out / "checkpoints" / "last.pt"),
                     "--image", str(image), "--score-threshold", "0.0"]) == 0
    dets = json.loads((tmp_path / f"{image.stem}_detections.json").read_text())
    assert isinstance(dets["detections"], list)
    assert (tmp_path / f"{image.stem}_overlay.png").stat().st_size > 0


def test_synthfog(run, tmp_path):
    _, data, _ = run
    dst = tmp_path / "fog" / "m.json"
    assert cli.main(["--out-dir", str(tmp_path), "synthfog", "--manifest", str(data), "--beta", "0.1",
                     "--airlight", "0.8", "--default-depth", "15", "--out-manifest", str(dst)]) == 0
    m = json.loads(dst.read_text())
    assert len(m["images"]) == 20


def test_bench_round_trip(run, tmp_path):
    _, data, out = run
    assert cli.main(["--out-dir", str(tmp_path), "bench", "--checkpoint", str(out / "checkpoints" / "last.pt"),
                     "--manifest", str(data), "--count", "5", "--repeats", "1"]) == 0
    rep = TimingReport.from_dict(json.loads((tmp_path / "timing.json").read_text()))
    assert rep.median_ms <= rep.p95_ms


def test_compare_rows(tmp_path):
    assert cli.main(["--out-dir", str(tmp_path), "compare"]) == 0
    rows = rows_from_json((tmp_path / "comparison.json").read_text())
    assert [(r.method, r.accuracy) for r in rows] == [
        ("DAFerRCNN", 75.4), ("FerRCNN-OpCV", 78.4), ("FerRCNN-DpRc", 82.1), ("Proposed method", 85.2)]


def test_exit_codes(run, tmp_path, monkeypatch):
    _, data, out = run
    ck = str(out / "checkpoints" / "last.pt")
    assert cli.main(["train"]) == 1
    assert cli.main(["no-such-command"]) == 1
    bad_cfg = tmp_path / "c.json"
    bad_cfg.write_text(json.dumps({"lr": -1}))
    assert cli.main(["--config", str(bad_cfg), "--out-dir", str(tmp_path), "train", "--synthetic", "10"]) == 1
    bad_manifest = tmp_path / "m.json"
    bad_manifest.write_text(json.dumps({"images": [{"id": "x"}]}))
    assert cli.main(["--out-dir", str(tmp_path), "eval", "--checkpoint", ck, "--manifest", str(bad_manifest)]) == 2
    assert cli.main(["--out-dir", str(tmp_path), "eval", "--checkpoint", str(tmp_path / "none.pt"),
                     "--manifest", str(data)]) == 1

    def boom(*a, **k):
        raise TrainingAborted("non-finite loss", {"total": float("nan")})
    monkeypatch.setattr(cli, "train", boom)
    assert cli.main(["--out-dir", str(tmp_path), "train", "--synthetic", "10"]) == 3
