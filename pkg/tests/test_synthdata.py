import json
import os

import numpy as np
import pytest
from scipy import ndimage

from dispfuse import dataio, synthdata
from dispfuse.core import normalize_disparity
from dispfuse.errors import ConfigurationError
from dispfuse.synthdata import SceneSpec, SensorModel


def _dilate(mask, px):
    return ndimage.binary_dilation(mask, iterations=px)


class TestSceneGeneration:
    def test_zero_objects_is_single_smooth_plane(self):
        spec = SceneSpec(height=32, width=64, num_objects=0, seed=4)
        scene = synthdata.render_scene(spec)
        assert np.all(scene.region_labels == 0)
        # no discontinuities: neighbor differences stay far below a pixel
        assert np.abs(np.diff(scene.gt_disp, axis=0)).max() < 1.0
        assert np.abs(np.diff(scene.gt_disp, axis=1)).max() < 1.0

    def test_same_seed_bit_identical(self):
        spec = SceneSpec(seed=99)
        a = synthdata.generate_scene(spec)
        b = synthdata.generate_scene(spec)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_different_seed_differs(self):
        a = synthdata.generate_scene(SceneSpec(seed=1))
        b = synthdata.generate_scene(SceneSpec(seed=2))
        assert not np.array_equal(a[0], b[0])

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_range_and_boundary_jumps(self, seed):
        spec = SceneSpec(
            height=96, width=128, num_objects=5, disparity_range=(10.0, 60.0), seed=seed
        )
        scene = synthdata.render_scene(spec)
        assert scene.gt_disp.min() >= 10.0
        assert scene.gt_disp.max() <= 60.0
        # scan boundary pixels of the generator's own object masks for a
        # disparity jump above 5 px
        lab, gt = scene.region_labels, scene.gt_disp
        jumps = []
        horiz = lab[:, :-1] != lab[:, 1:]
        jumps.append(np.abs(gt[:, :-1] - gt[:, 1:])[horiz])
        vert = lab[:-1, :] != lab[1:, :]
        jumps.append(np.abs(gt[:-1, :] - gt[1:, :])[vert])
        assert max(j.max() for j in jumps if j.size) > 5.0

    def test_intensity_in_range_and_textureless_regions_exist(self):
        scene = synthdata.render_scene(SceneSpec(num_objects=6, seed=2))
        assert scene.intensity.min() >= -1.0 and scene.intensity.max() <= 1.0
        assert (scene.texture_scale == 0).any() and (scene.texture_scale > 0).any()

    def test_dimensions_validated(self):
        with pytest.raises(ConfigurationError):
            SceneSpec(height=100, width=128)


class TestCorruption:
    def _scene(self, seed=5):
        return synthdata.render_scene(SceneSpec(height=96, width=128, seed=seed))

    def test_zero_corruption_is_identity(self):
        scene = self._scene()
        model = SensorModel(kind="stereo_like", noise_sigma=0.0, hole_fraction=0.0)
        raw, holes = synthdata.corrupt(scene.gt_disp, scene.intensity, model)
        assert np.array_equal(raw, scene.gt_disp)
        assert not holes.any()

    def test_stereo_hole_fraction(self):
        scene = self._scene()
        model = SensorModel(kind="stereo_like", noise_sigma=0.5, hole_fraction=0.10, seed=3)
        raw, holes = synthdata.corrupt(scene.gt_disp, scene.intensity, model)
        assert abs(holes.mean() - 0.10) <= 0.01
        assert np.all(raw[holes] == 0.0)

    def test_stereo_noise_worse_where_textureless(self):
        scene = self._scene(seed=9)
        model = SensorModel(kind="stereo_like", noise_sigma=1.0, hole_fraction=0.0, seed=1)
        raw, _ = synthdata.corrupt(scene.gt_disp, scene.intensity, model)
        err = np.abs(raw - scene.gt_disp)
        flat = scene.texture_scale == 0
        interior = ~_dilate(scene.edge_mask, 3)  # texture stats smear at edges
        assert err[flat & interior].mean() > 2.0 * err[~flat & interior].mean()

    def test_mono_error_concentrates_at_edges(self):
        scene = self._scene(seed=8)
        model = SensorModel(kind="mono_like", noise_sigma=0.0, blur_radius=3)
        raw, holes = synthdata.corrupt(scene.gt_disp, scene.intensity, model)
        assert not holes.any()
        err = np.abs(raw - scene.gt_disp)
        near_edge = _dilate(scene.edge_mask, 2)
        assert err[near_edge].mean() > 2.0 * err[~near_edge].mean()

    def test_tof_holes_contiguous(self):
        scene = self._scene()
        model = SensorModel(kind="tof_like", noise_sigma=0.5, hole_fraction=0.05, seed=2)
        raw, holes = synthdata.corrupt(scene.gt_disp, scene.intensity, model)
        assert holes.any()
        _, n_components = ndimage.label(holes)
        assert n_components == 1
        assert np.all(raw[holes] == 0.0)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            SensorModel(kind="lidar_like")

    def test_default_sensors_are_complementary(self):
        # the two default sensors fail in different places: stereo-style in
        # textureless areas, mono-style at disparity edges; both have error
        scene = self._scene(seed=12)
        stereo, mono = synthdata.default_sensors(seed=0)
        raw_s, holes_s = synthdata.corrupt(scene.gt_disp, scene.intensity, stereo)
        raw_m, _ = synthdata.corrupt(scene.gt_disp, scene.intensity, mono)
        err_s = np.abs(raw_s - scene.gt_disp)
        err_m = np.abs(raw_m - scene.gt_disp)
        assert err_s.mean() > 0 and err_m.mean() > 0
        near_edge = _dilate(scene.edge_mask, 2)
        flat = (scene.texture_scale == 0) & ~_dilate(scene.edge_mask, 3)
        textured = (scene.texture_scale > 0) & ~_dilate(scene.edge_mask, 3)
        valid_s = ~holes_s
        assert err_s[flat & valid_s].mean() > err_s[textured & valid_s].mean()
        assert err_m[near_edge].mean() > err_m[~near_edge].mean()
        # and the stereo-style input is roughly twice as bad overall
        ratio = err_s.mean() / err_m.mean()
        assert 1.3 < ratio < 3.5


class TestBuildDataset:
    def test_empty_dataset(self, tmp_path):
        manifest = synthdata.build_dataset(
            0, SceneSpec(height=32, width=32), synthdata.default_sensors(), str(tmp_path), d_max=64.0
        )
        assert manifest.labeled_ids == [] and manifest.test_ids == []
        assert os.path.exists(tmp_path / "manifest.json")
        assert not os.listdir(tmp_path / "gt")

    def test_unlabeled_split_arithmetic(self, tmp_path):
        manifest = synthdata.build_dataset(
            10,
            SceneSpec(height=32, width=32),
            synthdata.default_sensors(),
            str(tmp_path),
            d_max=64.0,
            unlabeled_frac=0.2,
        )
        assert len(manifest.labeled_ids) == 8
        assert len(manifest.unlabeled_ids) == 2

    def test_rebuild_same_seed_identical(self, tmp_path):
        spec = SceneSpec(height=32, width=32, num_objects=2)
        kwargs = dict(n_test=1, unlabeled_frac=0.25, root_seed=21)
        a, b = tmp_path / "a", tmp_path / "b"
        synthdata.build_dataset(4, spec, synthdata.default_sensors(), str(a), 64.0, **kwargs)
        synthdata.build_dataset(4, spec, synthdata.default_sensors(), str(b), 64.0, **kwargs)
        for rel in ("manifest.json", "gt/s00000.pfm", "intensity/s00002.png"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_samples_satisfy_fusion_invariants(self, micro_dataset):
        for sample_id in micro_dataset.all_ids[:3]:
            sample = dataio.load_sample(micro_dataset, sample_id, 32, 32)
            sample.validate()

    def test_normalized_inputs_within_range(self, micro_dataset):
        sample = dataio.load_sample(micro_dataset, micro_dataset.labeled_ids[0], 32, 32)
        for disp in sample.disp_inputs:
            normed = normalize_disparity((disp + 1) * micro_dataset.d_max / 2, micro_dataset.d_max)
            assert normed.min() >= -1 and normed.max() <= 1

    def test_range_exceeding_dmax_rejected(self, tmp_path):
        with pytest.raises(ConfigurationError):
            synthdata.build_dataset(
                1,
                SceneSpec(height=32, width=32, disparity_range=(10.0, 80.0)),
                synthdata.default_sensors(),
                str(tmp_path),
                d_max=64.0,
            )

    def test_manifest_readable_and_disjoint(self, micro_dataset):
        reloaded = dataio.load_manifest(micro_dataset.root)
        assert reloaded.labeled_ids == micro_dataset.labeled_ids
        assert set(reloaded.labeled_ids).isdisjoint(reloaded.unlabeled_ids)
        payload = json.loads(
            (os.path.join(micro_dataset.root, "manifest.json")
             and open(os.path.join(micro_dataset.root, "manifest.json")).read())
        )
        assert set(payload) == {"labeled", "unlabeled", "test", "d_max"}
