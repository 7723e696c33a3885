import json

import numpy as np
import pytest

import oracles
from fogdet.core import InvalidArgumentError
from fogdet.evalbench import (PUBLISHED_ROWS, ComparisonRow, EvalReport, TimingReport, average_precision,
                              comparison_table, evaluate_detections, match_detections, mean_ap, parse_table,
                              render_table, rows_from_json, rows_to_json, save_pr_plot, timing_benchmark)


def test_match_examples():
    gt = np.array([[0, 0, 10, 10.]])
    m = match_detections(gt, [0.9], [0], gt, [0])
    assert m.tp.tolist() == [True] and m.matched_gt.tolist() == [0]
    m = match_detections(np.vstack([gt, gt]), [0.8, 0.9], [0, 0], gt, [0])
    assert m.tp.tolist() == [False, True]  # higher score takes the gt
    m = match_detections(gt, [0.9], [1], gt, [0])
    assert m.tp.tolist() == [False]


def test_match_random_against_oracle(rng):
    for _ in range(300):
        nd, ng = int(rng.integers(0, 7)), int(rng.integers(0, 5))
        det = np.array([oracles.random_box(rng, 30) for _ in range(nd)]).reshape(-1, 4)
        gt = np.array([oracles.random_box(rng, 30) for _ in range(ng)]).reshape(-1, 4)
        ds, dl, gl = rng.random(nd), rng.integers(0, 2, nd), rng.integers(0, 2, ng)
        m = match_detections(det, ds, dl, gt, gl, 0.5)
        tp, matched = oracles.greedy_match(det, ds, dl, gt, gl, 0.5)
        assert m.tp.tolist() == tp and m.matched_gt.tolist() == matched


def test_ap_examples():
    assert average_precision([0.9, 0.8], [True, True], 2) == 1.0
    assert average_precision([0.9, 0.8], [False, False], 2) == 0.0
    # [DERIVED] 0.5 * 1 + 0.5 * (2/3)
    assert average_precision([0.9, 0.8, 0.7], [True, False, True], 2) == pytest.approx(5 / 6, abs=1e-15)
    assert average_precision([], [], 3) == 0.0
    assert average_precision([0.5], [False], 0) is None


def test_ap_random_against_oracle(rng):
    for _ in range(300):
        n = int(rng.integers(0, 10))
        scores = rng.integers(0, 5, n) / 4.0
        tp = rng.random(n) < 0.5
        num_gt = int(tp.sum() + rng.integers(0, 3))
        want = oracles.average_precision(scores, tp, num_gt)
        got = average_precision(scores, tp, num_gt)
        assert (got is None) == (want is None)
        if want is not None:
            assert got == pytest.approx(want, abs=1e-12)


def test_mean_ap_examples():
    assert mean_ap({0: 0.7}) == 0.7
    assert mean_ap({0: 1.0, 1: 0.0}) == 0.5
    assert mean_ap({0: 1.0, 1: None}) == 1.0
    with pytest.raises(InvalidArgumentError):
        mean_ap({})


def test_evaluate_perfect_and_empty():
    gts = [(np.array([[0, 0, 10, 10], [20, 20, 40, 40.]]), np.array([0, 3])), (np.array([[5, 5, 9, 9.]]), np.array([3]))]
    perfect = [(b, np.ones(len(b)), l) for b, l in gts]
    r = evaluate_detections(perfect, gts)
    assert r.mAP == 1.0 and sorted(r.per_class_ap) == [0, 3] and r.num_gt == 3
    empty = [(np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=int)) for _ in gts]
    assert evaluate_detections(empty, gts).mAP == 0.0
    r, curves = evaluate_detections(perfect, gts, return_curves=True)
    assert set(curves) == {0, 3}


def test_eval_report_round_trip():
    r = EvalReport({0: 0.5, 2: 1.0}, 0.75, 0.75, 3, 4, 5)
    assert EvalReport.from_dict(json.loads(json.dumps(r.to_dict()))) == r


class _Model:
    pass


def test_timing_benchmark_counts_and_stats():
    calls = []
    rep = timing_benchmark(_Model(), list(range(7)), warmup=2, detect_fn=lambda img, m: calls.append(img))
    assert len(rep.latencies_ms) == 7 and len(calls) == 9
    assert all(v > 0 for v in rep.latencies_ms) and rep.median_ms <= rep.p95_ms
    assert TimingReport.from_dict(json.loads(json.dumps(rep.to_dict()))) == rep
    with pytest.raises(InvalidArgumentError):
        timing_benchmark(_Model(), [], detect_fn=lambda i, m: None)


def test_published_rows_render_in_order(tmp_path):
    text, machine = comparison_table(PUBLISHED_ROWS, tmp_path / "cmp")
    # [PAPER] rows and accuracies as published
    lines = text.splitlines()[2:]
    assert [ln.split(" | ")[0].strip() for ln in lines] == ["DAFerRCNN", "FerRCNN-OpCV", "FerRCNN-DpRc",
                                                             "Proposed method"]
    assert [r.accuracy for r in parse_table(text)] == [75.4, 78.4, 82.1, 85.2]
    assert rows_from_json(machine) == list(PUBLISHED_ROWS)
    assert (tmp_path / "cmp.txt").read_text() == text and (tmp_path / "cmp.json").exists()


def test_table_edge_cases():
    one = [ComparisonRow("A", "B", 50.0, 12.5)]
    assert parse_table(render_table(one)) == one
    assert rows_from_json(rows_to_json(one)) == one
    with pytest.raises(InvalidArgumentError):
        ComparisonRow("x", "y", 101.0)
    with pytest.raises(InvalidArgumentError):
        render_table([])


def test_pr_plot_written(tmp_path):
    save_pr_plot({0: (np.array([0.5, 1.0]), np.array([1.0, 0.5]))}, tmp_path / "pr.png", {0: "car"})
    assert (tmp_path / "pr.png").stat().st_size > 0
