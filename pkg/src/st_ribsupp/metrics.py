"""Image-quality measures: RMSE, log-PSNR, MS-SSIM, L1, and their
combination.

The PSNR here is the bare log10(MAX^2 / MSE) without the conventional
x10; a dB value is reported alongside.  MS-SSIM evaluates the
contrast-structure factor at five dyadic scales with Gaussian windows of
sigma 0.5, 1, 2, 4, 8 (11x11 taps) and the luminance factor at the
coarsest scale only; per-scale exponents are 1 and the stabilizers are
c1 = (0.01 S)^2, c2 = (0.03 S)^2 with S the intensity range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

MS_SSIM_SIGMAS = (0.5, 1.0, 2.0, 4.0, 8.0)
MS_SSIM_WINDOW = 11
MIN_MS_SSIM_SIZE = MS_SSIM_WINDOW * 2 ** (len(MS_SSIM_SIGMAS) - 1)  # 176

DEFAULT_ALPHA = 0.75
DEFAULT_BETA = 0.25


def _pair(x, y):
    a = np.asarray(getattr(x, "data", x), dtype=float)
    b = np.asarray(getattr(y, "data", y), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(x, y):
    """Root mean squared difference."""
    a, b = _pair(x, y)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def l1(x, y):
    """Mean absolute difference."""
    a, b = _pair(x, y)
    return float(np.mean(np.abs(a - b)))


def psnr(x, y, max_x):
    """log10(max_x^2 / MSE), no x10 factor.

    Identical images have zero MSE; that case returns math.inf as a
    distinguished infinite-PSNR outcome rather than raising.
    """
    a, b = _pair(x, y)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return math.log10(max_x * max_x / mse)


def psnr_db(x, y, max_x):
    """Conventional decibel PSNR: 10 x the log form."""
    p = psnr(x, y, max_x)
    return math.inf if math.isinf(p) else 10.0 * p


def _gauss_window(sigma):
    half = MS_SSIM_WINDOW // 2
    g = np.exp(-0.5 * (np.arange(-half, half + 1) / sigma) ** 2)
    return g / g.sum()


def _window_means(img, win):
    """Separable windowed means at all fully-interior window positions."""
    half = MS_SSIM_WINDOW // 2
    out = ndimage.correlate1d(img, win, axis=0, mode="constant")
    out = ndimage.correlate1d(out, win, axis=1, mode="constant")
    return out[half:-half, half:-half]


def _scale_factors(a, b, sigma, c1, c2):
    win = _gauss_window(sigma)
    mu_a = _window_means(a, win)
    mu_b = _window_means(b, win)
    var_a = _window_means(a * a, win) - mu_a**2
    var_b = _window_means(b * b, win) - mu_b**2
    cov = _window_means(a * b, win) - mu_a * mu_b
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a**2 + mu_b**2 + c1)
    return float(lum.mean()), float(cs.mean())


def _downsample2(img):
    h, w = img.shape
    img = img[: h - h % 2, : w - w % 2]
    return 0.25 * (img[0::2, 0::2] + img[0::2, 1::2] + img[1::2, 0::2] + img[1::2, 1::2])


def ms_ssim(x, y, max_x):
    """Multi-scale structural similarity.

    Contrast-structure factors multiply across the five scales; the
    luminance factor enters once, at the coarsest scale.  Requires both
    dimensions >= 176 so an 11-px window fits after four downsamplings.
    """
    a, b = _pair(x, y)
    if min(a.shape) < MIN_MS_SSIM_SIZE:
        raise ValueError(
            f"image too small for {len(MS_SSIM_SIGMAS)} scales: need both "
            f"dimensions >= {MIN_MS_SSIM_SIZE}, got {a.shape}"
        )
    c1 = (0.01 * max_x) ** 2
    c2 = (0.03 * max_x) ** 2
    product = 1.0
    lum = 1.0
    for level, sigma in enumerate(MS_SSIM_SIGMAS):
        lum, cs = _scale_factors(a, b, sigma, c1, c2)
        product *= cs
        if level < len(MS_SSIM_SIGMAS) - 1:
            a = _downsample2(a)
            b = _downsample2(b)
    return float(lum * product)


def combined_loss(x, y, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA, max_x=1.0):
    """-alpha * log-PSNR + (1-alpha) * [beta * (1 - MS-SSIM) + (1-beta) * L1].

    Identical images propagate the infinite-PSNR outcome as -inf, kept
    distinct from every finite loss.
    """
    p = psnr(x, y, max_x)
    if math.isinf(p):
        return -math.inf
    rest = beta * (1.0 - ms_ssim(x, y, max_x)) + (1.0 - beta) * l1(x, y)
    return -alpha * p + (1.0 - alpha) * rest


@dataclass(frozen=True)
class MetricsReport:
    """One evaluation of a prediction against a reference."""

    rmse: float
    psnr_log: float
    psnr_db: float
    ms_ssim: float
    l1: float
    combined: float
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    @property
    def psnr_infinite(self):
        return math.isinf(self.psnr_log)

    def to_dict(self):
        """JSON-safe dict; infinite PSNR maps to null + a flag."""

        def num(v):
            return None if math.isinf(v) else v

        return {
            "rmse": self.rmse,
            "psnr_log": num(self.psnr_log),
            "psnr_db": num(self.psnr_db),
            "psnr_infinite": self.psnr_infinite,
            "ms_ssim": self.ms_ssim,
            "l1": self.l1,
            "combined": num(self.combined),
            "alpha": self.alpha,
            "beta": self.beta,
        }


def evaluate_pair(x, y, max_x, alpha=DEFAULT_ALPHA, beta=DEFAULT_BETA):
    """Compute every metric of this module for one image pair."""
    p = psnr(x, y, max_x)
    m = ms_ssim(x, y, max_x)
    return MetricsReport(
        rmse=rmse(x, y),
        psnr_log=p,
        psnr_db=math.inf if math.isinf(p) else 10.0 * p,
        ms_ssim=m,
        l1=l1(x, y),
        combined=(-math.inf if math.isinf(p)
                  else -alpha * p + (1.0 - alpha) * (beta * (1.0 - m) + (1.0 - beta) * l1(x, y))),
        alpha=alpha,
        beta=beta,
    )
