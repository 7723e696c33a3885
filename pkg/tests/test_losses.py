import math

import numpy as np
import pytest
import torch

from fogdet.core import InvalidArgumentError
from fogdet.losses import (LossBreakdown, LossWeights, NumericError, adversarial_domain_loss, composite_loss,
                           consistency_loss, depth_loss, reconstruction_loss, regulating_term, roi_head_loss,
                           rpn_loss, sample_anchors, smooth_l1)


def test_smooth_l1_examples():
    assert smooth_l1(torch.tensor([0.0]), torch.tensor([0.0])).item() == 0.0
    assert smooth_l1(torch.tensor([0.5]), torch.tensor([0.0])).item() == 0.125
    assert smooth_l1(torch.tensor([2.0]), torch.tensor([0.0])).item() == 1.5
    assert smooth_l1(torch.zeros(0), torch.zeros(0)).item() == 0.0


def test_sample_anchors_caps_positives(rng):
    labels = np.array([1] * 200 + [0] * 500 + [-1] * 50)
    s = sample_anchors(labels, rng, 256, 0.5)
    assert len(s) == 256 and (labels[s] == 1).sum() == 128 and np.all(labels[s] >= 0)
    s = sample_anchors(np.array([1, 0, 0, -1]), rng, 256)
    assert s.tolist() == [0, 1, 2]


def test_rpn_loss_examples():
    labels = np.array([1, 0, -1])
    sampled = np.array([0, 1])
    tgt = np.array([[0.1, 0.2, 0.3, 0.4], [0, 0, 0, 0], [0, 0, 0, 0.]])
    cls, reg = rpn_loss(torch.tensor([60.0, -60.0, 0.0]), torch.as_tensor(tgt), labels, tgt, sampled)
    assert cls.item() < 1e-20 and reg.item() == 0.0
    cls, reg = rpn_loss(torch.zeros(3), torch.zeros(3, 4), np.array([0, 0, -1]), tgt, np.array([0, 1]))
    assert reg.item() == 0.0 and cls.item() == pytest.approx(math.log(2))


def test_roi_head_loss_examples():
    logits = torch.tensor([[50.0, 0, 0, 0, 0, 0, 0]])
    cls, reg = roi_head_loss(logits, torch.zeros(1, 6, 4), [0], np.zeros((1, 4)))
    assert cls.item() < 1e-20 and reg.item() == 0.0
    cls, _ = roi_head_loss(torch.zeros(1, 7), torch.zeros(1, 6, 4), [6], np.zeros((1, 4)))
    # [DERIVED] -ln(1/7)
    assert cls.item() == pytest.approx(1.945910149, abs=1e-6)
    refine = torch.zeros(2, 6, 4)
    refine[0, 2] = torch.tensor([0.5, 0, 0, 0])
    _, reg = roi_head_loss(torch.zeros(2, 7), refine, [2, 6], np.zeros((2, 4)))
    assert reg.item() == pytest.approx(0.125 / 4)  # background row ignored


def test_adversarial_loss_examples():
    assert adversarial_domain_loss(torch.zeros(3), [0, 1, 1]).item() == pytest.approx(math.log(2))
    assert adversarial_domain_loss(torch.tensor([-40.0, 40.0]), [0, 1]).item() < 1e-15
    z = 1.3
    want = 0.5 * (math.log1p(math.exp(-z)) + math.log1p(math.exp(z)))  # target logit z, source logit z
    got = adversarial_domain_loss(torch.tensor([z, z], dtype=torch.float64), [1, 0]).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_depth_loss_examples():
    d = torch.rand(2, 3, 3, dtype=torch.float64) + 1
    assert depth_loss(d, d).item() == 0.0
    assert depth_loss(math.e * d, d).item() == pytest.approx(1.0, abs=1e-12)
    assert depth_loss(d, None).item() == 0.0
    with pytest.raises(InvalidArgumentError):
        depth_loss(d, d[:, :2])


def test_reconstruction_loss_examples():
    a = torch.full((1, 3, 4, 4), 0.5)
    assert reconstruction_loss(a, a).item() == 0.0
    assert reconstruction_loss(a, torch.full_like(a, 0.75)).item() == 0.25
    with pytest.raises(InvalidArgumentError):
        reconstruction_loss(a, a[..., :3])


def test_consistency_loss_examples():
    boxes = torch.tensor([[0, 0, 10, 10.]], dtype=torch.float64)
    probs = torch.tensor([[1.0, 0, 0]], dtype=torch.float64)
    assert consistency_loss(boxes, boxes.numpy(), probs, [0], 0, (100, 100)).item() == 0.0
    assert consistency_loss(torch.zeros(0, 4), np.zeros((0, 4)), torch.zeros(0, 3), [], 0, (10, 10)).item() == 0.0
    shifted = boxes + torch.tensor([5.0, 0, 5.0, 0], dtype=torch.float64)
    # [DERIVED] offsets 5/50 = 0.1 on two of four coordinates: (2 * 0.5 * 0.1**2) / 4 = 0.0025
    got = consistency_loss(shifted, boxes.numpy(), probs, [0], 0, (20, 50)).item()
    assert got == pytest.approx(0.0025, abs=1e-15)
    # one unmatched clear detection adds penalty 1, averaged over pair + unmatched
    got = consistency_loss(shifted, boxes.numpy(), probs, [0], 1, (20, 50)).item()
    assert got == pytest.approx((0.0025 + 1.0) / 2, abs=1e-15)


def test_regulating_term_examples():
    lin = torch.nn.Linear(1, 1)
    torch.nn.init.zeros_(lin.weight)
    assert regulating_term(lin).item() == 0.0
    torch.nn.init.constant_(lin.weight, 2.0)
    torch.nn.init.constant_(lin.bias, 5.0)  # biases excluded
    assert regulating_term(lin).item() == 2.0


def test_composite_worked_example():
    parts = LossBreakdown(1, .5, 2, .5, .6931, 1, .25, .2, 10)
    total = composite_loss(parts, LossWeights()).total
    # [DERIVED] 4 + .1*.6931 + .1*1 + .1*.25 + .5*.2 + 1e-4*10
    assert total == pytest.approx(4.29531, abs=1e-12)
    only = composite_loss(LossBreakdown(1, .5, 2, .5, .6931, 1, .25, .2, 10), LossWeights.detection_only())
    assert only.total == 4.0


def test_composite_errors():
    with pytest.raises(NumericError) as exc:
        composite_loss(LossBreakdown(1, float("nan")), LossWeights())
    assert exc.value.component == "rpn_reg"
    with pytest.raises(NumericError):
        composite_loss(LossBreakdown(adv=torch.tensor(float("inf"))), LossWeights())
    with pytest.raises(InvalidArgumentError):
        LossWeights(w_adv=-0.1)
    with pytest.raises(InvalidArgumentError):
        LossWeights(w_det=2.0)


def test_composite_skips_zero_weight_terms_exactly():
    parts = LossBreakdown(torch.tensor(0.1), torch.tensor(0.2), torch.tensor(0.3), torch.tensor(0.4),
                          adv=torch.tensor(float("1e30")))
    total = composite_loss(parts, LossWeights.detection_only()).total
    assert total.item() == (torch.tensor(0.1) + torch.tensor(0.2) + torch.tensor(0.3) + torch.tensor(0.4)).item()


def test_breakdown_record_is_plain_floats():
    rec = LossBreakdown(torch.tensor(1.0, requires_grad=True) * 2).to_record()
    assert rec["rpn_cls"] == 2.0 and all(isinstance(v, float) for v in rec.values())
