import math

import numpy as np
import pytest

from fogdet.core import Annotation, BBox, DomainTag, InvalidArgumentError, Sample, default_categories
from fogdet.fogsynth import FogParams, apply_fog, synthesize_foggy_sample, transmission_from_depth


def test_transmission_examples():
    assert np.all(transmission_from_depth(np.full((4, 4), 37.0), 0.0) == 1.0)
    # [DERIVED] exp(-0.5 * 2) = exp(-1)
    assert transmission_from_depth(np.array([[2.0]]), 0.5)[0, 0] == pytest.approx(0.367879441171, abs=1e-12)
    assert transmission_from_depth(np.array([[1e-12]]), 0.3)[0, 0] == pytest.approx(1.0)
    with pytest.raises(InvalidArgumentError):
        transmission_from_depth(np.ones((2, 2)), -0.1)


def test_apply_fog_examples():
    j = np.full((3, 2, 2), 0.2)
    np.testing.assert_array_equal(apply_fog(j, np.ones((2, 2)), 0.8), j)
    # [DERIVED] 0.2 * 0.5 + 0.8 * 0.5
    np.testing.assert_allclose(apply_fog(j, np.full((2, 2), 0.5), 0.8), 0.5, atol=1e-15)
    np.testing.assert_allclose(apply_fog(j, np.full((2, 2), 1e-300), (0.1, 0.5, 0.9)),
                               np.array([0.1, 0.5, 0.9])[:, None, None] * np.ones((3, 2, 2)), atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        apply_fog(j, np.ones((3, 3)), 0.8)


def test_synthesize_without_depth_uses_default_plane():
    img = np.random.default_rng(0).random((3, 40, 40)).astype(np.float32)
    ann = (Annotation(BBox(2, 2, 20, 20), default_categories()[1]),)
    s = Sample(img, ann, DomainTag.SOURCE, "a")
    f = synthesize_foggy_sample(s, FogParams(beta=0.2, airlight=(0.8,) * 3, default_depth=10.0))
    t = math.exp(-2.0)  # [DERIVED] uniform transmission e^-2
    np.testing.assert_allclose(f.image, img.astype(np.float64) * t + 0.8 * (1 - t), atol=1e-6)
    assert f.annotations == ann and f.domain is DomainTag.TARGET and f.id == "a_fog"
    assert f.clear_view is img


def test_beta_zero_is_identity():
    img = np.random.default_rng(1).random((3, 33, 35)).astype(np.float32)
    f = synthesize_foggy_sample(Sample(img, (), DomainTag.SOURCE, "z", depth=np.full((33, 35), 4.0)), FogParams(beta=0.0))
    assert f.image.dtype == img.dtype and np.array_equal(f.image, img)


def test_fog_params_validation():
    for kw in [dict(beta=-1), dict(airlight=(1.2, 0.5, 0.5)), dict(airlight=(0.5,)), dict(default_depth=0)]:
        with pytest.raises(InvalidArgumentError):
            FogParams(**kw)
