from collections import deque

import numpy as np
import pytest
import scipy.fft
from hypothesis import given, settings
from hypothesis import strategies as st

from tamperfool import forgery
from tamperfool.errors import DomainError
from tamperfool.forgery import GenerationParams


SMALL = GenerationParams(height=32, width=32)


def flood_fill_region_count(mask):
    """Count 4-connected regions of True pixels by BFS."""
    mask = np.asarray(mask, dtype=bool)
    seen = np.zeros_like(mask)
    regions = 0
    h, w = mask.shape
    for sy, sx in zip(*np.nonzero(mask)):
        if seen[sy, sx]:
            continue
        regions += 1
        queue = deque([(sy, sx)])
        seen[sy, sx] = True
        while queue:
            y, x = queue.popleft()
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    queue.append((ny, nx))
    return regions


class TestSynthesize:
    def test_deterministic(self):
        a = forgery.synthesize_forgery(42, SMALL)
        b = forgery.synthesize_forgery(42, SMALL)
        np.testing.assert_array_equal(a.image, b.image)
        np.testing.assert_array_equal(a.mask, b.mask)
        assert a.seed == b.seed == 42

    def test_different_seeds_differ(self):
        a = forgery.synthesize_forgery(1, SMALL)
        b = forgery.synthesize_forgery(2, SMALL)
        assert not np.array_equal(a.image, b.image)

    def test_shapes(self):
        s = forgery.synthesize_forgery(3, GenerationParams(height=32, width=48))
        assert s.image.shape == (32, 48, 3)
        assert s.mask.shape == (32, 48)
        assert s.mask.dtype == np.bool_

    def test_image_on_8bit_grid_in_unit_interval(self):
        s = forgery.synthesize_forgery(4, SMALL)
        assert np.all(s.image >= 0.0) and np.all(s.image <= 1.0)
        scaled = s.image * 255.0
        np.testing.assert_allclose(scaled, np.round(scaled), atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_mask_fraction_within_bounds(self, seed):
        s = forgery.synthesize_forgery(seed, SMALL)
        fraction = float(np.mean(s.mask))
        assert 0.05 <= fraction <= 0.35

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_mask_single_4connected_region(self, seed):
        s = forgery.synthesize_forgery(seed, SMALL)
        assert flood_fill_region_count(s.mask) == 1

    def test_invalid_dims_rejected(self):
        with pytest.raises(DomainError):
            forgery.synthesize_forgery(0, GenerationParams(height=30, width=32))
        with pytest.raises(DomainError):
            forgery.synthesize_forgery(0, GenerationParams(height=8, width=8))


def blockwise_hf_energy(image, mask):
    """Mean high-frequency DCT energy of 8x8 luma blocks fully inside vs
    fully outside the mask, using scipy's DCT as the independent routine."""
    luma = 0.299 * image[..., 0] + 0.587 * image[..., 1] + 0.114 * image[..., 2]
    h, w = luma.shape
    hf = np.zeros((8, 8), dtype=bool)
    for u in range(8):
        for v in range(8):
            hf[u, v] = max(u, v) >= 4
    inside, outside = [], []
    for i in range(0, h - 7, 8):
        for j in range(0, w - 7, 8):
            block_mask = mask[i : i + 8, j : j + 8]
            coef = scipy.fft.dctn(luma[i : i + 8, j : j + 8], norm="ortho")
            energy = float(np.sum(coef[hf] ** 2))
            if np.all(block_mask):
                inside.append(energy)
            elif not np.any(block_mask):
                outside.append(energy)
    return inside, outside


class TestForensicTrace:
    def test_hf_energy_contrast_over_100_samples(self):
        params = GenerationParams()  # default 128x128
        ratios = []
        for seed in range(100):
            s = forgery.synthesize_forgery(seed, params)
            inside, outside = blockwise_hf_energy(s.image, s.mask)
            assert inside and outside
            ratios.append(np.mean(inside) / np.mean(outside))
        assert float(np.mean(ratios)) >= 1.2


class TestDataset:
    def test_split_arithmetic_512(self):
        train_idx, val_idx = forgery.dataset_split(512)
        assert len(train_idx) == 448 and len(val_idx) == 64
        assert val_idx == list(range(448, 512))

    @given(st.integers(10, 2000))
    def test_split_disjoint_and_large_enough(self, n):
        train_idx, val_idx = forgery.dataset_split(n)
        assert set(train_idx).isdisjoint(val_idx)
        assert len(train_idx) + len(val_idx) == n
        assert len(val_idx) >= 0.10 * n

    def test_build_consecutive_seeds(self):
        ds = forgery.build_dataset(12, seed=100, params=SMALL)
        assert [s.seed for s in ds.samples] == list(range(100, 112))
        assert len(ds.train_indices) == 10 and len(ds.val_indices) == 2

    def test_build_deterministic(self):
        a = forgery.build_dataset(10, seed=5, params=SMALL)
        b = forgery.build_dataset(10, seed=5, params=SMALL)
        for sa, sb in zip(a.samples, b.samples):
            np.testing.assert_array_equal(sa.image, sb.image)
            np.testing.assert_array_equal(sa.mask, sb.mask)

    def test_too_small_rejected(self):
        with pytest.raises(DomainError):
            forgery.build_dataset(9, seed=0, params=SMALL)

    def test_round_trip_bitwise(self, tmp_path):
        ds = forgery.build_dataset(10, seed=3, params=SMALL)
        forgery.save_dataset(ds, tmp_path / "data")
        loaded = forgery.load_dataset(tmp_path / "data")
        assert loaded.base_seed == ds.base_seed
        assert loaded.train_indices == ds.train_indices
        assert loaded.val_indices == ds.val_indices
        assert loaded.params == ds.params
        for sa, sb in zip(ds.samples, loaded.samples):
            assert sa.seed == sb.seed
            np.testing.assert_array_equal(sa.image, sb.image)
            np.testing.assert_array_equal(sa.mask, sb.mask)

    def test_index_file_layout(self, tmp_path):
        ds = forgery.build_dataset(10, seed=3, params=SMALL)
        forgery.save_dataset(ds, tmp_path / "data")
        index = (tmp_path / "data" / "index.tsv").read_text()
        assert "sample_00000.png" in index
        assert "sample_00000_mask.png" in index
        lines = [l for l in index.splitlines() if not l.startswith("#")]
        assert lines[0].split("\t") == ["index", "seed", "image", "mask", "split"]
        assert len(lines) == 11

    def test_mask_png_is_binary(self, tmp_path):
        from PIL import Image

        ds = forgery.build_dataset(10, seed=3, params=SMALL)
        forgery.save_dataset(ds, tmp_path / "data")
        arr = np.asarray(Image.open(tmp_path / "data" / "sample_00000_mask.png"))
        assert set(np.unique(arr)) <= {0, 255}

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            forgery.load_dataset(tmp_path / "nope")
