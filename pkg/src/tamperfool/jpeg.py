"""Simplified baseline JPEG round trip.

Encodes and immediately decodes: RGB to YCbCr, no chroma subsampling,
blockwise 8x8 DCT-II, quantization with the standard luminance and
chrominance tables scaled by the conventional quality formula, then the
inverse path. Bit-exact agreement with any particular encoder is a
non-goal; the codec's role is to introduce realistic, quality-controlled
compression artifacts.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, DomainError

# standard base quantization tables
LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)

CHROMA_TABLE = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)

_DCT8 = None


def dct_matrix_8() -> np.ndarray:
    """Orthonormal 8x8 DCT-II matrix; D @ block @ D.T transforms a block."""
    global _DCT8
    if _DCT8 is None:
        i = np.arange(8).reshape(8, 1)
        j = np.arange(8).reshape(1, 8)
        d = np.sqrt(2.0 / 8.0) * np.cos((2 * j + 1) * i * np.pi / 16.0)
        d[0] = 1.0 / np.sqrt(8.0)
        _DCT8 = d
    return _DCT8


def quality_tables(quality: int) -> tuple[np.ndarray, np.ndarray]:
    """Luma and chroma quantization tables at the given quality factor."""
    if not 1 <= quality <= 100:
        raise DomainError(f"jpeg quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    luma = np.clip(np.floor((LUMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)
    chroma = np.clip(np.floor((CHROMA_TABLE * scale + 50.0) / 100.0), 1.0, 255.0)
    return luma, chroma


def rgb_to_ycbcr(x: np.ndarray) -> np.ndarray:
    """Full-range RGB (0..255) to YCbCr (0..255, chroma centered at 128)."""
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(x: np.ndarray) -> np.ndarray:
    y, cb, cr = x[..., 0], x[..., 1] - 128.0, x[..., 2] - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    return np.stack([r, g, b], axis=-1)


def _round_half_away(v: np.ndarray) -> np.ndarray:
    return np.sign(v) * np.floor(np.abs(v) + 0.5)


def _blockify(channel: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    return (
        channel.reshape(h // 8, 8, w // 8, 8).transpose(0, 2, 1, 3).reshape(-1, 8, 8)
    )


def _unblockify(blocks: np.ndarray, h: int, w: int) -> np.ndarray:
    return (
        blocks.reshape(h // 8, w // 8, 8, 8).transpose(0, 2, 1, 3).reshape(h, w)
    )


def jpeg_roundtrip(x: np.ndarray, quality: int) -> np.ndarray:
    """Compress and decompress an H x W x 3 image with values in [0, 1].

    Dimensions not divisible by 8 are handled by replicate-padding on the
    bottom/right edges and cropping the result back.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != 3:
        raise DimensionError(f"jpeg_roundtrip expects an (H, W, 3) image, got {x.shape}")
    luma_t, chroma_t = quality_tables(quality)

    h, w, _ = x.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    work = x
    if pad_h or pad_w:
        work = np.pad(x, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    hp, wp = work.shape[:2]

    d = dct_matrix_8()
    ycc = rgb_to_ycbcr(work * 255.0)
    rec = np.empty_like(ycc)
    for c in range(3):
        table = luma_t if c == 0 else chroma_t
        blocks = _blockify(ycc[..., c] - 128.0)
        coefs = d @ blocks @ d.T
        quantized = _round_half_away(coefs / table) * table
        rec[..., c] = _unblockify(d.T @ quantized @ d, hp, wp) + 128.0

    out = np.clip(ycbcr_to_rgb(rec) / 255.0, 0.0, 1.0)
    if pad_h or pad_w:
        out = out[:h, :w]
    return out
