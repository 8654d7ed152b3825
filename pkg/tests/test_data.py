"""
Tests for dataset loading, synthetic generation, edge ground truth and resizing.
"""

import json

import numpy as np
import pytest
from scipy import ndimage

from swnet.data import (
    SYNTH_RECORD,
    BimodalDataset,
    BimodalSample,
    DatasetManifest,
    SynthConfig,
    derive_edge_gt,
    generate_synthetic,
    load_dataset,
    read_sample,
    resize_sample,
    synthesize_sample,
    write_image,
    write_sample,
)


def window_scan_edges(mask, k=3):
    """Edge oracle: 1 where the clipped k-window holds both a 0 and a 1."""
    h, w = mask.shape
    r = k // 2
    out = np.zeros_like(mask, dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            window = mask[max(0, i - r) : i + r + 1, max(0, j - r) : j + r + 1]
            out[i, j] = int(window.min() == 0 and window.max() == 1)
    return out


def otsu_threshold(values, bins=256):
    hist, edges = np.histogram(values, bins=bins)
    centers = (edges[:-1] + edges[1:]) / 2
    weight = hist.astype(np.float64)
    best, best_t = -1.0, centers[0]
    for index in range(1, bins):
        w0, w1 = weight[:index].sum(), weight[index:].sum()
        if w0 == 0 or w1 == 0:
            continue
        m0 = (weight[:index] * centers[:index]).sum() / w0
        m1 = (weight[index:] * centers[index:]).sum() / w1
        between = w0 * w1 * (m0 - m1) ** 2
        if between > best:
            best, best_t = between, centers[index]
    return best_t


def iou(a, b):
    union = np.logical_or(a, b).sum()
    return np.logical_and(a, b).sum() / union if union else 1.0


def make_sample(sample_id, size, rng, mask=None):
    if mask is None:
        mask = (rng.random((size, size)) > 0.5).astype(np.uint8)
    return BimodalSample(
        id=sample_id,
        rgb=rng.random((size, size, 3)).astype(np.float32),
        nir=rng.random((size, size, 1)).astype(np.float32),
        mask=mask,
    )


class TestDeriveEdgeGt:
    def test_constant_masks_have_no_edges(self):
        assert not derive_edge_gt(np.zeros((8, 8), dtype=np.uint8)).any()
        assert not derive_edge_gt(np.ones((8, 8), dtype=np.uint8)).any()

    def test_centered_block(self):
        mask = np.zeros((5, 5), dtype=np.uint8)
        mask[1:4, 1:4] = 1
        expected = np.ones((5, 5), dtype=np.uint8)
        expected[2, 2] = 0
        np.testing.assert_array_equal(derive_edge_gt(mask, 3), expected)

    def test_matches_window_scan_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            mask = (rng.random((16, 16)) > rng.uniform(0.2, 0.8)).astype(np.uint8)
            np.testing.assert_array_equal(derive_edge_gt(mask), window_scan_edges(mask))

    def test_larger_window(self):
        rng = np.random.default_rng(2)
        mask = (rng.random((16, 16)) > 0.5).astype(np.uint8)
        expected = window_scan_edges(mask, 5)
        np.testing.assert_array_equal(derive_edge_gt(mask, 5), expected)

    def test_rejects_non_binary_mask(self):
        with pytest.raises(ValueError, match="binary"):
            derive_edge_gt(np.full((4, 4), 0.5))

    def test_rejects_even_window(self):
        with pytest.raises(ValueError, match="odd"):
            derive_edge_gt(np.zeros((4, 4), dtype=np.uint8), k=4)


class TestBimodalSample:
    def test_shape_mismatch_is_rejected(self):
        with pytest.raises(ValueError, match="nir shape"):
            BimodalSample(
                id="bad",
                rgb=np.zeros((8, 8, 3)),
                nir=np.zeros((4, 4, 1)),
                mask=np.zeros((8, 8), dtype=np.uint8),
            )

    def test_non_binary_mask_is_rejected(self):
        with pytest.raises(ValueError, match="mask values"):
            BimodalSample(
                id="bad",
                rgb=np.zeros((4, 4, 3)),
                nir=np.zeros((4, 4, 1)),
                mask=np.full((4, 4), 2, dtype=np.uint8),
            )


class TestResizeSample:
    def test_downscale_to_416(self):
        rng = np.random.default_rng(0)
        mask = np.zeros((1024, 1024), dtype=np.uint8)
        mask[300:700, 200:600] = 1
        resized = resize_sample(make_sample("big", 1024, rng, mask), 416)
        assert resized.rgb.shape == (416, 416, 3)
        assert resized.nir.shape == (416, 416, 1)
        assert resized.mask.shape == (416, 416)
        assert set(np.unique(resized.mask)) <= {0, 1}
        np.testing.assert_array_equal(resized.edge, derive_edge_gt(resized.mask))

    def test_identity_resize_keeps_arrays(self):
        rng = np.random.default_rng(1)
        sample = make_sample("same", 32, rng)
        resized = resize_sample(sample, 32)
        np.testing.assert_array_equal(resized.rgb, sample.rgb)
        np.testing.assert_array_equal(resized.nir, sample.nir)
        np.testing.assert_array_equal(resized.mask, sample.mask)
        np.testing.assert_array_equal(resized.edge, derive_edge_gt(sample.mask))

    def test_rejects_non_positive_side(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ValueError, match="positive"):
            resize_sample(make_sample("x", 8, rng), 0)


class TestLoadDataset:
    def test_single_sample(self, tmp_path):
        rng = np.random.default_rng(0)
        write_sample(tmp_path, make_sample("patch_0000", 16, rng))
        manifest = load_dataset(tmp_path, "train")
        assert manifest.samples == ["patch_0000"]
        assert manifest.source == "disk"

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError, match="no complete samples"):
            load_dataset(tmp_path)

    def test_missing_counterpart_names_the_id(self, tmp_path):
        rng = np.random.default_rng(0)
        for index in range(3):
            write_sample(tmp_path, make_sample(f"patch_{index:04d}", 16, rng))
        (tmp_path / "nir" / "patch_0001.png").unlink()
        with pytest.raises(ValueError, match="patch_0001"):
            load_dataset(tmp_path)

    def test_unreadable_image(self, tmp_path):
        rng = np.random.default_rng(0)
        write_sample(tmp_path, make_sample("patch_0000", 16, rng))
        (tmp_path / "rgb" / "patch_0000.png").write_bytes(b"not a png")
        with pytest.raises(ValueError, match="Unreadable image"):
            load_dataset(tmp_path)

    def test_split_is_sorted_eighty_twenty(self, tmp_path):
        rng = np.random.default_rng(0)
        ids = [f"patch_{index:04d}" for index in range(10)]
        for sample_id in reversed(ids):
            write_sample(tmp_path, make_sample(sample_id, 16, rng))
        assert load_dataset(tmp_path, "train").samples == ids[:8]
        assert load_dataset(tmp_path, "test").samples == ids[8:]

    def test_masks_binarized_at_half_intensity(self, tmp_path):
        rng = np.random.default_rng(0)
        write_sample(tmp_path, make_sample("patch_0000", 8, rng))
        gray = np.zeros((8, 8))
        gray[:, :4] = 0.6
        gray[:, 4:] = 0.4
        write_image(tmp_path / "mask" / "patch_0000.png", gray)
        sample = read_sample(tmp_path, "patch_0000")
        assert sample.mask[:, :4].all()
        assert not sample.mask[:, 4:].any()

    def test_resize_round_trip_preserves_masks(self, tmp_path):
        rng = np.random.default_rng(5)
        write_sample(tmp_path / "a", make_sample("patch_0000", 48, rng))
        resized = resize_sample(read_sample(tmp_path / "a", "patch_0000"), 32)
        write_sample(tmp_path / "b", resized)
        reloaded = read_sample(tmp_path / "b", "patch_0000")
        np.testing.assert_array_equal(reloaded.mask, resized.mask)

    def test_manifest_save_and_load(self, tmp_path, synth_root):
        manifest = load_dataset(synth_root, "train")
        path = manifest.save(tmp_path / "manifest.json")
        assert DatasetManifest.load(path) == manifest


class TestSyntheticGenerator:
    def test_refuses_undetectable_targets(self):
        with pytest.raises(ValueError, match="undetectable"):
            SynthConfig(rgb_gap=0.0, nir_gap=0.0)

    def test_size_floor(self):
        with pytest.raises(ValueError):
            SynthConfig(size=32)

    def test_deterministic_bytes(self, tmp_path):
        cfg = SynthConfig(n_samples=4, rgb_gap=0.0, nir_gap=0.4, seed=7)
        generate_synthetic(cfg, tmp_path / "first")
        generate_synthetic(cfg, tmp_path / "second")
        for name in ("rgb", "nir", "mask"):
            for path in sorted((tmp_path / "first" / name).iterdir()):
                twin = tmp_path / "second" / name / path.name
                assert path.read_bytes() == twin.read_bytes()

    def test_smaller_regeneration_replaces_older_samples(self, tmp_path):
        root = tmp_path / "synth"
        generate_synthetic(SynthConfig(n_samples=10, seed=1), root)
        manifest = generate_synthetic(SynthConfig(n_samples=5, seed=2), root)
        for name in ("rgb", "nir", "mask"):
            assert len(list((root / name).glob("*.png"))) == 5
        assert len(manifest) == 4
        assert len(load_dataset(root, "test")) == 1

    def test_refuses_directory_with_foreign_images(self, tmp_path):
        foreign = tmp_path / "mask" / "real.png"
        write_image(foreign, np.zeros((64, 64), dtype=np.float32))
        with pytest.raises(ValueError, match="Refusing to write synthetic data"):
            generate_synthetic(SynthConfig(n_samples=2), tmp_path)
        assert foreign.is_file()

    def test_manifest_is_synthetic_with_seeds(self, synth_root):
        manifest = load_dataset(synth_root, "train")
        assert manifest.source == "synthetic"
        assert len(manifest) == 8
        assert set(manifest.seeds) == set(manifest.samples)
        record = json.loads((synth_root / SYNTH_RECORD).read_text(encoding="utf-8"))
        assert record["config"]["seed"] == 7

    def test_every_mask_has_a_component(self):
        cfg = SynthConfig(n_samples=20, n_blobs=(1, 3), seed=3)
        for index in range(cfg.n_samples):
            sample = synthesize_sample(cfg, f"s{index}", seed=index)
            _, n_components = ndimage.label(sample.mask)
            assert n_components >= 1

    def test_color_camouflage_and_nir_offset(self):
        cfg = SynthConfig(rgb_gap=0.0, nir_gap=0.4, seed=1)
        rgb_diffs = []
        for seed in range(20):
            sample = synthesize_sample(cfg, f"s{seed}", seed)
            fg = sample.mask.astype(bool)
            rgb_diffs.append(sample.rgb[fg].mean(axis=0) - sample.rgb[~fg].mean(axis=0))
            nir_gap = sample.nir[fg].mean() - sample.nir[~fg].mean()
            assert abs(nir_gap - 0.4) < 0.05
        assert np.all(np.abs(np.mean(rgb_diffs, axis=0)) < 0.03)

    def test_only_nir_separates_targets(self):
        cfg = SynthConfig(rgb_gap=0.0, nir_gap=0.4, seed=1)
        rgb_ious, nir_ious = [], []
        for seed in range(20):
            sample = synthesize_sample(cfg, f"s{seed}", seed)
            fg = sample.mask.astype(bool)
            best = 0.0
            for channel in range(3):
                values = sample.rgb[..., channel]
                t = otsu_threshold(values)
                best = max(best, iou(values > t, fg), iou(values <= t, fg))
            rgb_ious.append(best)
            nir = sample.nir[..., 0]
            nir_ious.append(iou(nir > otsu_threshold(nir), fg))
        assert np.mean(rgb_ious) < 0.2
        assert np.mean(nir_ious) > 0.6


class TestBimodalDataset:
    def test_items_are_channel_first(self, synth_root):
        dataset = BimodalDataset(load_dataset(synth_root, "train"), side=64)
        item = dataset[0]
        assert item["rgb"].shape == (3, 64, 64)
        assert item["nir"].shape == (1, 64, 64)
        assert item["mask"].shape == (1, 64, 64)
        assert item["edge"].shape == (1, 64, 64)
        assert item["id"] == "patch_0000"
