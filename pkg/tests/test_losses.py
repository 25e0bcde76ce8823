"""Training loss terms and evaluation metrics."""

import numpy as np
import pytest

from splatface.autodiff import Tensor, finite_diff_check
from splatface.losses import (LossWeights, aue, d_ssim, lmd, perceptual_proxy,
                              psnr, ssim, ssim_value, total_loss)


def _img(seed, h=16, w=16, c=3):
    return np.random.default_rng(seed).uniform(0, 1, size=(h, w, c))


def test_weight_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.lambda3) == (0.2, 0.5, 1e-3)
    with pytest.raises(ValueError):
        LossWeights(lambda1=-0.1)


def test_total_loss_zero_at_perfect_reconstruction():
    img = _img(0)
    feat = np.random.default_rng(1).normal(size=32)
    total, terms = total_loss(img, img, feat, feat, LossWeights())
    assert float(total.data) == 0.0
    assert all(float(v.data) == 0.0 for v in terms.values())


def test_total_loss_constant_offset():
    img = _img(2) * 0.5
    feat = np.zeros(32)
    total, _ = total_loss(img + 0.1, img, feat, feat,
                          LossWeights(lambda1=0.0, lambda2=0.0))
    assert np.allclose(float(total.data), 0.1, atol=1e-12)


def test_total_loss_shape_mismatch():
    with pytest.raises(ValueError):
        total_loss(np.zeros((4, 4, 3)), np.zeros((5, 5, 3)), None, None,
                   LossWeights())


def test_total_loss_terms_logged_separately():
    _, terms = total_loss(_img(3), _img(4), np.ones(32), np.zeros(32),
                          LossWeights())
    assert set(terms) == {"l1", "d_ssim", "perceptual", "align"}


def test_dssim_identical_and_symmetric():
    a, b = _img(5), _img(6)
    assert float(d_ssim(a, a).data) == 0.0
    assert np.allclose(float(d_ssim(a, b).data), float(d_ssim(b, a).data))


def test_dssim_on_inverted_constant_regions():
    a = np.full((16, 16, 3), 0.9)
    b = np.full((16, 16, 3), 0.1)
    a[:8] = 0.1
    b[:8] = 0.9
    assert float(d_ssim(a, b).data) > 0.5


def test_dssim_requires_window_sized_images():
    with pytest.raises(ValueError):
        d_ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))


def test_dssim_range_on_random_pairs():
    rng = np.random.default_rng(7)
    for _ in range(100):
        a = rng.uniform(0, 1, size=(12, 12))
        b = rng.uniform(0, 1, size=(12, 12))
        v = float(d_ssim(a, b).data)
        s = float(ssim(Tensor(a), Tensor(b)).data)
        assert -1.0 - 1e-9 <= s <= 1.0 + 1e-9
        assert 0.0 <= v <= 2.0
        assert np.allclose(v, max(1.0 - s, 0.0))


def test_perceptual_identical_and_offset():
    img = _img(8)
    assert float(perceptual_proxy(img, img).data) == 0.0
    assert np.allclose(float(perceptual_proxy(img * 0.5 + 0.2,
                                              img * 0.5 + 0.3).data), 0.0,
                       atol=1e-12)


def test_perceptual_checkerboard_vs_flat():
    h = w = 8
    checker = np.indices((h, w)).sum(axis=0) % 2
    flat = np.full((h, w), 0.5)
    assert float(perceptual_proxy(checker.astype(float), flat).data) > 0.0


def test_psnr_values():
    img = _img(9)
    assert psnr(img, img) == 99.0
    base = np.full((10, 10, 3), 0.5)
    assert np.allclose(psnr(base + 0.1, base), 20.0)
    assert np.allclose(psnr(np.ones((4, 4)), np.zeros((4, 4))), 0.0)


def test_aue_values_and_symmetry():
    rng = np.random.default_rng(10)
    gt = rng.uniform(0, 4, size=(20, 17))
    assert aue(gt, gt) == (0.0, 0.0)
    from splatface.cmdm import LOWER_SLOTS
    pred = gt.copy()
    pred[:, list(LOWER_SLOTS)] += 0.5
    l, u = aue(pred, gt)
    assert np.allclose(l, 0.5) and u == 0.0
    assert aue(pred, gt) == aue(gt, pred)
    with pytest.raises(ValueError):
        aue(np.zeros((3, 17)), np.zeros((4, 17)))


def test_lmd_values():
    rng = np.random.default_rng(11)
    lm = rng.uniform(0, 64, size=(5, 20, 2))
    assert lmd(lm, lm) == 0.0
    assert np.allclose(lmd(lm + np.array([3.0, 4.0]), lm), 5.0)
    assert np.allclose(lmd(2 * lm + np.array([3.0, 4.0]), 2 * lm), 2 * 2.5)
    with pytest.raises(ValueError):
        lmd(np.zeros((5, 20, 2)), np.zeros((5, 19, 2)))


def test_total_loss_gradient_full_weights_16x16():
    gt = _img(12)
    feat = np.random.default_rng(13).normal(size=32)

    def f(t):
        total, _ = total_loss(t, gt, Tensor(feat), Tensor(feat + 0.3),
                              LossWeights())
        return total

    pred = np.clip(_img(14) * 0.8 + 0.1, 0.05, 0.95)
    assert finite_diff_check(f, pred, eps=1e-6) < 1e-3


def test_total_loss_gradient_8x8_without_dssim():
    gt = _img(15, h=8, w=8)

    def f(t):
        total, _ = total_loss(t, gt, None, None, LossWeights(lambda1=0.0))
        return total

    pred = np.clip(_img(16, h=8, w=8) * 0.8 + 0.1, 0.05, 0.95)
    assert finite_diff_check(f, pred, eps=1e-6) < 1e-3


def test_align_gradient_through_total_loss():
    gt = _img(17)
    vl = np.random.default_rng(18).normal(size=32)

    def f(t):
        total, _ = total_loss(Tensor(gt), Tensor(gt), t, Tensor(vl),
                              LossWeights())
        return total

    al = vl + np.random.default_rng(19).choice([-1.0, 1.0], size=32)
    assert finite_diff_check(f, al) < 1e-4


def test_ssim_value_matches_tensor_path():
    a, b = _img(20), _img(21)
    assert np.allclose(ssim_value(a, b),
                       float(ssim(Tensor(a), Tensor(b)).data))
