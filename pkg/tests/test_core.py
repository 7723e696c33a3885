import numpy as np
import pytest

from fogdet.core import (Annotation, BBox, CategoryLabel, Detection, DomainTag, EmptyBoxError, InvalidArgumentError,
                         Sample, box_iou, clip_box, clip_boxes, default_categories, validate_sample)


def _sample(size=64, anns=(), depth=None):
    return Sample(np.full((3, size, size), 0.5, dtype=np.float32), tuple(anns), DomainTag.SOURCE, "s", depth=depth)


def test_bbox_rejects_degenerate_and_nonfinite():
    for bad in [(0, 0, 0, 2), (0, 0, 2, 0), (3, 0, 1, 2), (0, 0, float("nan"), 2), (0, 0, float("inf"), 2)]:
        with pytest.raises(InvalidArgumentError):
            BBox(*bad)


def test_bbox_geometry():
    b = BBox(1, 2, 4, 8)
    assert (b.width, b.height, b.area) == (3, 6, 18)
    assert BBox.from_seq(b.as_array()) == b


def test_box_iou_examples():
    assert box_iou(BBox(0, 0, 2, 2), BBox(0, 0, 2, 2)) == 1.0
    assert box_iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0
    # [DERIVED] areas 4 and 4, intersection 2, union 6
    assert box_iou(BBox(0, 0, 2, 2), BBox(1, 0, 3, 2)) == pytest.approx(1 / 3, abs=1e-15)


def test_clip_box_examples():
    assert clip_box(BBox(-5, -5, 10, 10), 8, 8) == BBox(0, 0, 8, 8)
    assert clip_box(BBox(1, 1, 4, 4), 8, 8) == BBox(1, 1, 4, 4)
    with pytest.raises(EmptyBoxError):
        clip_box(BBox(9, 9, 12, 12), 8, 8)


def test_clip_boxes_vectorized():
    out = clip_boxes(np.array([[-5, -5, 10, 10], [1, 1, 4, 4.]]), 8, 8)
    np.testing.assert_array_equal(out, [[0, 0, 8, 8], [1, 1, 4, 4]])


def test_default_categories_has_six_named_classes():
    cats = default_categories()
    assert [c.id for c in cats] == list(range(6))
    assert cats[0].name == "car"


def test_validate_sample_ok_and_violations():
    cat = default_categories()
    assert validate_sample(_sample(anns=[Annotation(BBox(1, 1, 10, 10), cat[0])])) == []
    bad_label = _sample(anns=[Annotation(BBox(1, 1, 10, 10), CategoryLabel(6, "x"))])
    assert any("label out of range" in m for m in validate_sample(bad_label, 6))
    bad_depth = Sample(np.zeros((3, 200, 200), np.float32), (), DomainTag.SOURCE, "d", depth=np.ones((100, 100)))
    assert any("depth size mismatch" in m for m in validate_sample(bad_depth))


def test_validate_sample_bounds_and_range():
    s = _sample(anns=[Annotation(BBox(1, 1, 70, 10), default_categories()[0])])
    assert any("outside image" in m for m in validate_sample(s))
    hot = Sample(np.full((3, 64, 64), 1.5, np.float32), (), DomainTag.SOURCE, "h")
    assert any("[0, 1]" in m for m in validate_sample(hot))
    tiny = Sample(np.zeros((3, 16, 16), np.float32), (), DomainTag.SOURCE, "t")
    assert validate_sample(tiny)


def test_detection_score_range():
    with pytest.raises(InvalidArgumentError):
        Detection(BBox(0, 0, 1, 1), default_categories()[0], 1.5)


def test_sample_gt_arrays():
    cat = default_categories()
    s = _sample(anns=[Annotation(BBox(1, 2, 3, 4), cat[2]), Annotation(BBox(5, 6, 7, 8), cat[0])])
    np.testing.assert_array_equal(s.gt_boxes(), [[1, 2, 3, 4], [5, 6, 7, 8]])
    assert s.gt_labels().tolist() == [2, 0]
    assert _sample().gt_boxes().shape == (0, 4)
