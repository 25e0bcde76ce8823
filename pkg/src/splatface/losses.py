"""Training losses and evaluation metrics.

The perceptual term is a multi-scale image-gradient L1 (a self-contained
stand-in for a pretrained perceptual metric); everything else is standard:
L1, D-SSIM (11x11 Gaussian window), PSNR, landmark distance, and AU error
split into lower/upper subsets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .cmdm import LOWER_SLOTS, UPPER_SLOTS, align_loss

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP = 99.0


@dataclass
class LossWeights:
    lambda1: float = 0.2     # D-SSIM
    lambda2: float = 0.5     # perceptual proxy
    lambda3: float = 1e-3    # cross-modal alignment

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("loss weights must be non-negative")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _gauss_kernel1d(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


_WINDOW_CACHE = {}


def _window_indices(h, w):
    """Flat pixel indices of all valid 11x11 windows, plus Gaussian weights."""
    key = (h, w)
    if key not in _WINDOW_CACHE:
        k = SSIM_WINDOW
        rows = np.arange(h - k + 1)
        cols = np.arange(w - k + 1)
        base = rows[:, None] * w + cols[None, :]
        offs = (np.arange(k)[:, None] * w + np.arange(k)[None, :]).reshape(-1)
        idx = base.reshape(-1)[:, None] + offs[None, :]
        k1 = _gauss_kernel1d()
        weights = np.outer(k1, k1).reshape(-1)
        _WINDOW_CACHE[key] = (idx, weights)
    return _WINDOW_CACHE[key]


def _to_gray(img):
    img = _as_tensor(img)
    if img.ndim == 3:
        return img.mean(axis=2)
    return img


def ssim(pred, gt):
    """Gaussian-weighted SSIM over valid 11x11 windows (scalar Tensor)."""
    p = _to_gray(pred)
    g = _to_gray(gt)
    if p.shape != g.shape:
        raise ValueError("SSIM inputs must share the same shape")
    h, w = p.shape
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    idx, wv = _window_indices(h, w)
    wt = Tensor(wv)
    pw = p.reshape(h * w)[idx]
    gw = g.reshape(h * w)[idx]
    mu_p = pw @ wt
    mu_g = gw @ wt
    var_p = (pw * pw) @ wt - mu_p * mu_p
    var_g = (gw * gw) @ wt - mu_g * mu_g
    cov = (pw * gw) @ wt - mu_p * mu_g
    num = (2.0 * mu_p * mu_g + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_p * mu_p + mu_g * mu_g + SSIM_C1) * (var_p + var_g + SSIM_C2)
    return (num / den).mean()


def d_ssim(pred, gt):
    """Structural dissimilarity: max(1 - SSIM, 0)."""
    return (1.0 - ssim(pred, gt)).relu()


def _grad_l1(a, b):
    dx = (a[:, 1:] - a[:, :-1]) - (b[:, 1:] - b[:, :-1])
    dy = (a[1:, :] - a[:-1, :]) - (b[1:, :] - b[:-1, :])
    return dx.abs().mean() + dy.abs().mean()


def _downsample2(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    if img.ndim == 3:
        return x.reshape(h // 2, 2, w // 2, 2, img.shape[2]).mean(axis=(1, 3))
    return x.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def perceptual_proxy(pred, gt):
    """Mean L1 between image-gradient maps at full and half resolution."""
    p = _as_tensor(pred)
    g = _as_tensor(gt)
    if p.shape != g.shape:
        raise ValueError("perceptual proxy inputs must share the same shape")
    full = _grad_l1(p, g)
    half = _grad_l1(_downsample2(p), _downsample2(g))
    return 0.5 * (full + half)


def total_loss(pred, gt, c_audio_explicit, c_visual_explicit, weights: LossWeights):
    """L1 + l1*D-SSIM + l2*perceptual + l3*alignment; returns (total, terms)."""
    p = _as_tensor(pred)
    g = _as_tensor(gt)
    if p.shape != g.shape:
        raise ValueError("prediction and ground truth shapes differ")
    l1 = (p - g).abs().mean()
    terms = {"l1": l1}
    total = l1
    if weights.lambda1 > 0:
        dss = d_ssim(p, g)
        terms["d_ssim"] = dss
        total = total + weights.lambda1 * dss
    if weights.lambda2 > 0:
        perc = perceptual_proxy(p, g)
        terms["perceptual"] = perc
        total = total + weights.lambda2 * perc
    if weights.lambda3 > 0 and c_audio_explicit is not None:
        al = align_loss(c_audio_explicit, c_visual_explicit)
        terms["align"] = al
        total = total + weights.lambda3 * al
    return total, terms


# -- plain-number evaluation metrics -----------------------------------------

def psnr(pred, gt):
    """Peak signal-to-noise ratio in dB for images in [0, 1]; capped at 99."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mse = float(np.mean((pred - gt) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def ssim_value(pred, gt):
    return float(ssim(Tensor(np.asarray(pred)), Tensor(np.asarray(gt))).data)


def aue(pred_au, gt_au):
    """(AUE-L, AUE-U): mean absolute error over lower / upper AU subsets."""
    pred_au = np.asarray(pred_au, dtype=np.float64)
    gt_au = np.asarray(gt_au, dtype=np.float64)
    if pred_au.shape != gt_au.shape:
        raise ValueError("AU trajectory shapes differ")
    err = np.abs(pred_au - gt_au)
    return (float(err[:, list(LOWER_SLOTS)].mean()),
            float(err[:, list(UPPER_SLOTS)].mean()))


def lmd(pred_lm, gt_lm):
    """Mean Euclidean landmark distance in pixels."""
    pred_lm = np.asarray(pred_lm, dtype=np.float64)
    gt_lm = np.asarray(gt_lm, dtype=np.float64)
    if pred_lm.shape != gt_lm.shape:
        raise ValueError("landmark track shapes differ")
    return float(np.linalg.norm(pred_lm - gt_lm, axis=-1).mean())
