"""Localization-accuracy and image-quality metrics.

Pixel-level F1 and IoU against ground-truth masks, the decrease rate used
to report attack strength, and PSNR/SSIM for measuring how visually close
an attacked image stays to the original. All image metrics operate on the
[0, 1] scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5


@dataclass
class MetricsRecord:
    f1: float
    iou: float
    psnr_db: float  # math.inf when every pair was identical
    ssim: float
    decrease_rate_percent: int | None = None
    psnr_excluded_count: int = 0


@dataclass
class BinaryConfusion:
    tp: int
    fp: int
    fn: int
    tn: int


def binarize(prob_map: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map into a binary mask; boundary is inclusive."""
    return (np.asarray(prob_map) >= threshold).astype(np.uint8)


def confusion(pred: np.ndarray, gt: np.ndarray) -> BinaryConfusion:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(
            f"mask shapes differ: {pred.shape} vs {gt.shape}"
        )
    p = pred.astype(bool)
    g = gt.astype(bool)
    return BinaryConfusion(
        tp=int(np.sum(p & g)),
        fp=int(np.sum(p & ~g)),
        fn=int(np.sum(~p & g)),
        tn=int(np.sum(~p & ~g)),
    )


def f1_score(pred: np.ndarray, gt: np.ndarray) -> float:
    c = confusion(pred, gt)
    denom = 2 * c.tp + c.fp + c.fn
    return 2 * c.tp / denom if denom else 0.0


def iou_score(pred: np.ndarray, gt: np.ndarray) -> float:
    c = confusion(pred, gt)
    denom = c.tp + c.fp + c.fn
    return c.tp / denom if denom else 0.0


def decrease_rate(before: float, after: float) -> int:
    """Percent drop from before to after, rounded half away from zero."""
    if before <= 0:
        raise DomainError(f"decrease_rate needs a positive baseline, got {before}")
    value = 100.0 * (before - after) / before
    return int(math.copysign(math.floor(abs(value) + 0.5), value))


def psnr(x: np.ndarray, x2: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {x2.shape}")
    mse = float(np.mean(np.square(x - x2)))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _luma(image: np.ndarray) -> np.ndarray:
    return 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]


def _gaussian_1d(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size) - size // 2
    k = np.exp(-(coords.astype(np.float64) ** 2) / (2.0 * sigma**2))
    return k / k.sum()


def _filter_valid(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    # separable valid-mode correlation along both axes
    rows = np.lib.stride_tricks.sliding_window_view(x, k.size, axis=0) @ k
    return np.lib.stride_tricks.sliding_window_view(rows, k.size, axis=1) @ k


def ssim(x: np.ndarray, x2: np.ndarray) -> float:
    """Mean local SSIM over luma with an 11x11 Gaussian window."""
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise DimensionError(f"image shapes differ: {x.shape} vs {x2.shape}")
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"ssim expects (H, W, 3) images, got {x.shape}")
    h, w = x.shape[:2]
    if min(h, w) < SSIM_WINDOW:
        raise DomainError(
            f"ssim needs min(H, W) >= {SSIM_WINDOW}, got {h}x{w}"
        )
    a = _luma(x)
    b = _luma(x2)
    k = _gaussian_1d()
    mu_a = _filter_valid(a, k)
    mu_b = _filter_valid(b, k)
    var_a = _filter_valid(a * a, k) - mu_a * mu_a
    var_b = _filter_valid(b * b, k) - mu_b * mu_b
    cov = _filter_valid(a * b, k) - mu_a * mu_b
    numerator = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    denominator = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(numerator / denominator))


def evaluate(model, samples, attacked_images=None) -> MetricsRecord:
    """Aggregate localization accuracy (and, for attacked pairs, quality).

    ``model`` needs a ``predict(image) -> probability map`` method.
    ``attacked_images``, when given, must align with ``samples``; the model
    is then evaluated on the attacked images while F1/IoU still score
    against each sample's ground-truth mask. PSNR/SSIM are computed
    between original and attacked; infinite PSNR values (identical pairs)
    are left out of the mean and counted separately.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("evaluate needs at least one sample")
    if attacked_images is not None:
        attacked_images = list(attacked_images)
        if len(attacked_images) != len(samples):
            raise DimensionError(
                f"{len(attacked_images)} attacked images for {len(samples)} samples"
            )

    f1s, ious, psnrs, ssims = [], [], [], []
    excluded = 0
    for i, sample in enumerate(samples):
        image = attacked_images[i] if attacked_images is not None else sample.image
        pred = binarize(model.predict(image))
        f1s.append(f1_score(pred, sample.mask))
        ious.append(iou_score(pred, sample.mask))
        if attacked_images is not None:
            p = psnr(sample.image, image)
            if math.isinf(p):
                excluded += 1
            else:
                psnrs.append(p)
            ssims.append(ssim(sample.image, image))

    return MetricsRecord(
        f1=float(np.mean(f1s)),
        iou=float(np.mean(ious)),
        psnr_db=float(np.mean(psnrs)) if psnrs else math.inf,
        ssim=float(np.mean(ssims)) if ssims else 1.0,
        psnr_excluded_count=excluded,
    )
