import os
import struct

import numpy as np
import pytest
import torch

from dispfuse import dataio
from dispfuse.core import NetConfig
from dispfuse.errors import ConfigurationError, DataLoadError, FormatError


class TestPfm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal((3, 4)).astype(np.float32) * 50
        path = str(tmp_path / "x.pfm")
        dataio.write_pfm(path, arr)
        back, scale = dataio.read_pfm(path)
        assert scale < 0
        assert np.abs(back - arr).max() < 1e-6

    def test_little_endian_header_layout(self, tmp_path):
        # hand-written file per the public format: 4 columns, 3 rows,
        # negative scale = little endian, rows bottom-up
        path = tmp_path / "hand.pfm"
        values = np.arange(12, dtype=np.float32)
        with open(path, "wb") as f:
            f.write(b"Pf\n4 3\n-1.0\n")
            f.write(struct.pack("<12f", *values))
        arr, scale = dataio.read_pfm(str(path))
        assert arr.shape == (3, 4)
        assert scale == -1.0
        # first values in the file are the bottom row of the image
        assert np.array_equal(arr[2], values[:4])
        assert np.array_equal(arr[0], values[8:])

    def test_color_pfm_rejected(self, tmp_path):
        path = tmp_path / "color.pfm"
        path.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 48)
        with pytest.raises(FormatError) as err:
            dataio.read_pfm(str(path))
        assert "color.pfm" in str(err.value)

    @pytest.mark.parametrize(
        "header", [b"Px\n2 2\n-1.0\n", b"Pf\n2\n-1.0\n", b"Pf\n2 2\nzz\n"]
    )
    def test_malformed_header_rejected(self, tmp_path, header):
        path = tmp_path / "bad.pfm"
        path.write_bytes(header + b"\x00" * 16)
        with pytest.raises(FormatError):
            dataio.read_pfm(str(path))

    def test_truncated_data_rejected(self, tmp_path):
        path = tmp_path / "short.pfm"
        path.write_bytes(b"Pf\n4 4\n-1.0\n" + b"\x00" * 8)
        with pytest.raises(FormatError):
            dataio.read_pfm(str(path))


def _build_plane_dataset(root, height, width, value, d_max=64.0):
    """Minimal on-disk dataset with uniform disparity planes."""
    for sub in ("intensity", "disp1", "disp2", "gt", "mask"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)
    intensity = np.linspace(0, 255, num=height * width, dtype=np.float64)
    intensity = intensity.reshape(height, width).astype(np.uint8)
    dataio.write_png_gray(os.path.join(root, "intensity", "p0.png"), intensity)
    plane = np.full((height, width), value, dtype=np.float32)
    for sub in ("disp1", "disp2", "gt"):
        dataio.write_pfm(os.path.join(root, sub, "p0.pfm"), plane)
    dataio.write_png_gray(
        os.path.join(root, "mask", "p0.png"), np.full((height, width), 255, np.uint8)
    )
    manifest = dataio.Manifest(
        labeled_ids=["p0"], unlabeled_ids=[], test_ids=[], d_max=d_max, root=root
    )
    manifest.save()
    return manifest


class TestLoadBatch:
    def test_deterministic_without_augment(self, micro_dataset):
        cfg = NetConfig(batch=2, height=32, width=32, lg=4, ld=4)
        ids = micro_dataset.labeled_ids[:2]
        a = dataio.load_batch(micro_dataset, ids, cfg)
        b = dataio.load_batch(micro_dataset, ids, cfg)
        assert torch.equal(a.inputs, b.inputs)
        assert torch.equal(a.gt, b.gt)

    def test_flip_is_involution(self, micro_dataset):
        cfg = NetConfig(batch=2, height=32, width=32, lg=4, ld=4)
        batch = dataio.load_batch(micro_dataset, micro_dataset.labeled_ids[:2], cfg)
        twice = batch.flipped().flipped()
        assert torch.equal(twice.inputs, batch.inputs)
        assert torch.equal(twice.gt, batch.gt)
        assert torch.equal(twice.mask, batch.mask)

    def test_augment_flips_all_channels_together(self, micro_dataset):
        cfg = NetConfig(batch=2, height=32, width=32, lg=4, ld=4)
        ids = micro_dataset.labeled_ids[:2]
        plain = dataio.load_batch(micro_dataset, ids, cfg)

        class AlwaysFlip:
            def random(self, n):
                return np.zeros(n)  # < 0.5 means flip in our convention

        flipped = dataio.load_batch(
            micro_dataset, ids, cfg, augment=True, rng=AlwaysFlip()
        )
        assert torch.equal(flipped.inputs, plain.flipped().inputs)
        assert torch.equal(flipped.mask, plain.flipped().mask)

    def test_resize_identity_when_already_sized(self, tmp_path):
        manifest = _build_plane_dataset(str(tmp_path), 32, 64, value=20.0)
        cfg = NetConfig(batch=1, height=32, width=64, lg=4, ld=4)
        sample = dataio.load_sample(manifest, "p0", 32, 64)
        raw, _ = dataio.read_pfm(os.path.join(str(tmp_path), "gt", "p0.pfm"))
        expected = 2.0 * raw / manifest.d_max - 1.0
        assert np.allclose(sample.gt_disp, expected, atol=1e-6)

    def test_disparity_scales_with_width_ratio(self, tmp_path):
        # a uniform plane of 10 px resized to double width becomes 20 px
        manifest = _build_plane_dataset(str(tmp_path), 32, 64, value=10.0)
        sample = dataio.load_sample(manifest, "p0", 32, 128)
        got_px = (sample.gt_disp + 1.0) * manifest.d_max / 2.0
        assert np.allclose(got_px, 20.0, atol=1e-5)
        assert sample.left_intensity.shape == (32, 128)

    def test_channel_order_fixed(self, micro_dataset):
        cfg = NetConfig(batch=1, height=32, width=32, lg=4, ld=4)
        sid = micro_dataset.labeled_ids[0]
        sample = dataio.load_sample(micro_dataset, sid, 32, 32)
        batch = dataio.load_batch(micro_dataset, [sid], cfg)
        stack = batch.inputs[0].numpy()
        assert np.allclose(stack[0], sample.disp_inputs[0])
        assert np.allclose(stack[1], sample.disp_inputs[1])
        assert np.allclose(stack[2], sample.left_intensity)
        assert np.allclose(stack[3], sample.gradient_map)

    def test_unlabeled_sample_has_no_gt(self, micro_dataset):
        sid = micro_dataset.unlabeled_ids[0]
        sample = dataio.load_sample(micro_dataset, sid, 32, 32)
        assert sample.gt_disp is None
        assert not sample.valid_mask.any()

    def test_missing_file_raises(self, micro_dataset):
        with pytest.raises(DataLoadError):
            dataio.load_sample(micro_dataset, "nope", 32, 32)

    def test_empty_ids_rejected(self, micro_dataset):
        cfg = NetConfig(batch=1, height=32, width=32, lg=4, ld=4)
        with pytest.raises(ConfigurationError):
            dataio.load_batch(micro_dataset, [], cfg)


class TestRealPool:
    def test_single_labeled_sample(self, micro_dataset, rng):
        one = dataio.Manifest(
            labeled_ids=micro_dataset.labeled_ids[:1],
            unlabeled_ids=[],
            test_ids=[],
            d_max=micro_dataset.d_max,
            root=micro_dataset.root,
        )
        cfg = NetConfig(batch=1, height=32, width=32, lg=4, ld=4)
        pool = dataio.sample_real_pool(one, cfg, rng, 1)
        assert pool.sample_ids == one.labeled_ids

    def test_draw_without_replacement(self, micro_dataset, rng):
        cfg = NetConfig(batch=4, height=32, width=32, lg=4, ld=4)
        pool = dataio.sample_real_pool(micro_dataset, cfg, rng, 4)
        assert len(set(pool.sample_ids)) == 4
        assert pool.labeled

    def test_reproducible_draws(self, micro_dataset):
        cfg = NetConfig(batch=2, height=32, width=32, lg=4, ld=4)
        a = dataio.sample_real_pool(micro_dataset, cfg, np.random.default_rng(7), 2)
        b = dataio.sample_real_pool(micro_dataset, cfg, np.random.default_rng(7), 2)
        assert a.sample_ids == b.sample_ids

    def test_oversized_draw_rejected(self, micro_dataset, rng):
        cfg = NetConfig(batch=2, height=32, width=32, lg=4, ld=4)
        with pytest.raises(ConfigurationError):
            dataio.sample_real_pool(micro_dataset, cfg, rng, 100)


class TestManifest:
    def test_overlapping_ids_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            dataio.Manifest(["a"], ["a"], [], 64.0, str(tmp_path))

    def test_missing_keys_rejected(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"labeled": []}')
        with pytest.raises(FormatError):
            dataio.load_manifest(str(tmp_path))

    def test_adapter_stub_raises(self):
        with pytest.raises(NotImplementedError):
            dataio.adapt_external("sceneflow")
