import itertools

import numpy as np
import pytest
import torch

import oracles
from fogdet.core import BBox, Detection, InvalidArgumentError, default_categories
from fogdet.pseudo import (PseudoLabelConfig, consistency_pairs, ema_update, generate_pseudo_labels,
                           make_teacher, pseudo_label_mask)


def _net(seed):
    torch.manual_seed(seed)
    return torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.ReLU(), torch.nn.Linear(8, 2)).double()


def _gap(t, s):
    return torch.cat([(a - b).flatten() for a, b in zip(t.parameters(), s.parameters())])


def test_ema_zero_momentum_copies_and_fixed_point():
    s, t = _net(0), make_teacher(_net(1))
    ema_update(t, s, 0.0)
    assert torch.equal(_gap(t, s), torch.zeros_like(_gap(t, s)))
    before = [p.clone() for p in t.parameters()]
    ema_update(t, s, 0.9)
    assert all(torch.equal(a, b) for a, b in zip(before, t.parameters()))


def test_ema_gap_scales_geometrically():
    s, t = _net(0), make_teacher(_net(1))
    g0 = _gap(t, s)
    for _ in range(2):
        ema_update(t, s, 0.9)
    # [DERIVED] gap * 0.9**2 = 0.81
    torch.testing.assert_close(_gap(t, s), 0.81 * g0, rtol=1e-12, atol=1e-15)


def test_ema_rejects_mismatch():
    with pytest.raises(InvalidArgumentError):
        ema_update(make_teacher(torch.nn.Linear(3, 2)), torch.nn.Linear(4, 2), 0.5)
    with pytest.raises(InvalidArgumentError):
        ema_update(make_teacher(_net(0)), _net(0), 1.0)


def test_teacher_is_frozen_copy():
    s = _net(0)
    t = make_teacher(s)
    assert not any(p.requires_grad for p in t.parameters()) and not t.training
    assert torch.equal(_gap(t, s), torch.zeros_like(_gap(t, s)))


def _det(score, cat=0):
    return Detection(BBox(0, 0, 10, 10), default_categories()[cat], score)


def test_pseudo_label_threshold_examples():
    assert generate_pseudo_labels([], 0.8) == []
    assert len(generate_pseudo_labels([_det(0.95), _det(0.6)], 0.8)) == 1
    assert len(generate_pseudo_labels([_det(0.8)], 0.8)) == 1  # boundary kept
    assert pseudo_label_mask(np.array([0.79, 0.8, 0.81]), 0.8).tolist() == [False, True, True]


def test_pseudo_label_config_validation():
    for kw in [dict(confidence_threshold=0.0), dict(confidence_threshold=1.0), dict(ema_momentum=1.0),
               dict(ema_momentum=-0.1)]:
        with pytest.raises(InvalidArgumentError):
            PseudoLabelConfig(**kw)


def test_pairs_identical_and_disjoint():
    b = np.array([[0, 0, 10, 10], [20, 20, 30, 30.]])
    p = consistency_pairs(b, [0.9, 0.8], [0, 1], b, [0.9, 0.8], [0, 1])
    assert sorted(p.pairs) == [(0, 0), (1, 1)] and p.unmatched_clear == [] and p.unmatched_foggy == []
    p = consistency_pairs(b, [0.9, 0.8], [0, 1], b + 100, [0.9, 0.8], [0, 1])
    assert p.pairs == [] and p.unmatched_clear == [0, 1] and p.unmatched_foggy == [0, 1]


def _pairs_oracle(cb, cs, cl, fb, fs, fl, thr):
    """Exhaustive: rank every admissible pair by the documented key, then accept greedily."""
    cand = [(i, j) for i, j in itertools.product(range(len(cb)), range(len(fb)))
            if cl[i] == fl[j] and oracles.iou(cb[i], fb[j]) >= thr]
    cand.sort(key=lambda ij: (-cs[ij[0]] * fs[ij[1]], -oracles.iou(cb[ij[0]], fb[ij[1]]), ij[0], ij[1]))
    used_c, used_f, out = set(), set(), []
    for i, j in cand:
        if i not in used_c and j not in used_f:
            used_c.add(i)
            used_f.add(j)
            out.append((i, j))
    return out


def test_pairs_match_oracle(rng):
    for _ in range(300):
        n, m = int(rng.integers(0, 6)), int(rng.integers(0, 6))
        base = np.array([oracles.random_box(rng, 40) for _ in range(max(n, m))]).reshape(-1, 4)
        cb = base[:n]
        fb = base[:m] + rng.normal(0, 1, (m, 4)).clip(-0.4, 0.4)
        cs, fs = rng.integers(1, 5, n) / 4, rng.integers(1, 5, m) / 4
        cl, fl = rng.integers(0, 2, n), rng.integers(0, 2, m)
        got = consistency_pairs(cb, cs, cl, fb, fs, fl, 0.5)
        assert got.pairs == _pairs_oracle(cb, cs, cl, fb, fs, fl, 0.5)
