"""Synthetic spliced-forgery generation with exact ground-truth masks.

Each sample is a procedural background texture with a donor patch pasted
in. Background and donor are compressed at different JPEG qualities and
carry different noise, so the pasted region differs from its surroundings
in local compression and noise statistics. That contrast is the forensic
trace the localizers learn to find.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DomainError
from .jpeg import jpeg_roundtrip


@dataclass(frozen=True)
class GenerationParams:
    height: int = 128
    width: int = 128
    background_quality: int = 95
    donor_quality: int = 70
    noise_amplitude: float = 0.02
    donor_noise_sigma: float = 0.02


@dataclass
class ForgerySample:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1], on the 8-bit grid
    mask: np.ndarray  # (H, W) bool, True = tampered
    seed: int


@dataclass
class ForgeryDataset:
    samples: list[ForgerySample]
    train_indices: list[int]
    val_indices: list[int]
    params: GenerationParams
    base_seed: int


def _texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Sum of three random sinusoidal gradients, per channel, in [0.15, 0.85].

    Spatial frequencies are drawn per pixel (periods between about 7 and
    43 px) so local texture statistics do not depend on image size. That
    band carries enough mid-frequency structure that median filtering and
    recompression visibly cost signal, the way they do on photographic
    content, while the 8x8-block trace contrast between donor and
    background stays clearly learnable.
    """
    yy, xx = np.meshgrid(
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
    )
    base = np.zeros((h, w, 3))
    for _ in range(3):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        freq = rng.uniform(0.023, 0.14)  # cycles per pixel
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave = np.sin(
            2.0 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase
        )
        base += wave[..., None] * rng.uniform(0.4, 1.0, size=3)
    lo = base.min(axis=(0, 1), keepdims=True)
    hi = base.max(axis=(0, 1), keepdims=True)
    return 0.15 + 0.7 * (base - lo) / np.maximum(hi - lo, 1e-9)


def _sample_region(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """One axis-aligned rectangle or ellipse; area fraction lands in [0.05, 0.35]."""
    mask = np.zeros((h, w), dtype=bool)
    if rng.integers(0, 2) == 0:
        rh = int(h * rng.uniform(0.25, 0.55))
        rw = int(w * rng.uniform(0.25, 0.55))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        mask[top : top + rh, left : left + rw] = True
    else:
        rh = int(h * rng.uniform(0.40, 0.60))
        rw = int(w * rng.uniform(0.40, 0.60))
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        ay = (rh - 1) / 2.0
        ax = (rw - 1) / 2.0
        ys = (np.arange(rh) - ay) / ay
        xs = (np.arange(rw) - ax) / ax
        mask[top : top + rh, left : left + rw] = (
            ys[:, None] ** 2 + xs[None, :] ** 2 <= 1.0
        )
    return mask


def synthesize_forgery(seed: int, params: GenerationParams) -> ForgerySample:
    """Deterministic spliced forgery: donor patch pasted into a background.

    The background gets uniform noise then JPEG at ``background_quality``;
    the donor gets JPEG at ``donor_quality`` then Gaussian noise, so its
    noise survives compression. The final composite is quantized to the
    8-bit grid, making PNG persistence lossless.
    """
    h, w = params.height, params.width
    if h % 4 or w % 4 or h < 16 or w < 16:
        raise DomainError(
            f"image dims must be >= 16 and divisible by 4, got {h}x{w}"
        )
    rng = np.random.default_rng(seed)

    background = _texture(rng, h, w)
    background = background + rng.uniform(
        -params.noise_amplitude, params.noise_amplitude, size=background.shape
    )
    background = jpeg_roundtrip(np.clip(background, 0.0, 1.0), params.background_quality)

    donor = _texture(rng, h, w)
    donor = jpeg_roundtrip(donor, params.donor_quality)
    donor = np.clip(
        donor + rng.normal(0.0, params.donor_noise_sigma, size=donor.shape), 0.0, 1.0
    )

    mask = _sample_region(rng, h, w)
    image = np.where(mask[..., None], donor, background)
    image = np.round(image * 255.0) / 255.0
    return ForgerySample(image=image, mask=mask, seed=seed)


def dataset_split(n: int) -> tuple[list[int], list[int]]:
    """Deterministic split: the last ceil(n/8) samples form the validation set."""
    val_count = math.ceil(n / 8)
    return list(range(n - val_count)), list(range(n - val_count, n))


def build_dataset(
    n: int, seed: int, params: GenerationParams = GenerationParams()
) -> ForgeryDataset:
    if n < 10:
        raise DomainError(f"dataset needs at least 10 samples, got {n}")
    samples = [synthesize_forgery(seed + i, params) for i in range(n)]
    train_indices, val_indices = dataset_split(n)
    return ForgeryDataset(
        samples=samples,
        train_indices=train_indices,
        val_indices=val_indices,
        params=params,
        base_seed=seed,
    )


def _image_name(i: int) -> str:
    return f"sample_{i:05d}.png"


def _mask_name(i: int) -> str:
    return f"sample_{i:05d}_mask.png"


def save_dataset(dataset: ForgeryDataset, path) -> None:
    """Write index.tsv plus one RGB PNG and one grayscale mask PNG per sample."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"# base_seed={dataset.base_seed}"]
    for field in dataclasses.fields(GenerationParams):
        lines.append(f"# {field.name}={getattr(dataset.params, field.name)}")
    lines.append("index\tseed\timage\tmask\tsplit")
    for i, sample in enumerate(dataset.samples):
        split = "val" if i in set(dataset.val_indices) else "train"
        lines.append(
            f"{i}\t{sample.seed}\t{_image_name(i)}\t{_mask_name(i)}\t{split}"
        )
        rgb = np.round(sample.image * 255.0).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(path / _image_name(i))
        gray = np.where(sample.mask, 255, 0).astype(np.uint8)
        Image.fromarray(gray, mode="L").save(path / _mask_name(i))
    (path / "index.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path) -> ForgeryDataset:
    path = Path(path)
    text = (path / "index.tsv").read_text(encoding="utf-8")
    header: dict[str, str] = {}
    rows: list[list[str]] = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
        elif line.strip():
            rows.append(line.split("\t"))
    field_types = {f.name: f.type for f in dataclasses.fields(GenerationParams)}
    kwargs = {}
    for name in field_types:
        raw = header[name]
        kwargs[name] = float(raw) if "." in raw or "e" in raw else int(raw)
    params = GenerationParams(**kwargs)

    samples: list[ForgerySample] = []
    train_indices: list[int] = []
    val_indices: list[int] = []
    for row in rows[1:]:  # skip the column header
        i, seed, image_name, mask_name, split = row
        image = np.asarray(Image.open(path / image_name), dtype=np.float64) / 255.0
        mask = np.asarray(Image.open(path / mask_name)) > 127
        samples.append(ForgerySample(image=image, mask=mask, seed=int(seed)))
        (val_indices if split == "val" else train_indices).append(int(i))
    return ForgeryDataset(
        samples=samples,
        train_indices=train_indices,
        val_indices=val_indices,
        params=params,
        base_seed=int(header["base_seed"]),
    )
