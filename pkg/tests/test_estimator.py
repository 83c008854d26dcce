import numpy as np
import pytest
import torch
from sklearn.base import clone

from dispfuse import dataio
from dispfuse.errors import ConfigurationError, ShapeError
from dispfuse.estimator import DisparityFusionModel


def micro_model(**overrides):
    defaults = dict(
        height=32,
        width=32,
        lg=4,
        ld=4,
        num_scales=2,
        batch=2,
        epochs=1,
        seed=0,
    )
    defaults.update(overrides)
    return DisparityFusionModel(**defaults)


class TestSklearnProtocol:
    def test_get_set_params_roundtrip(self):
        model = micro_model()
        params = model.get_params()
        assert params["alpha"] == 1.0
        model.set_params(alpha=0.5, theta1=100.0)
        assert model.alpha == 0.5 and model.theta1 == 100.0

    def test_clone_preserves_params(self):
        model = micro_model(alpha=1.25, mode="semi")
        cloned = clone(model)
        assert cloned.get_params() == model.get_params()

    def test_invalid_config_surfaces_at_fit(self, micro_dataset):
        model = micro_model(num_scales=9)
        with pytest.raises(ConfigurationError):
            model.fit(micro_dataset)


@pytest.fixture(scope="module")
def fitted(micro_dataset, tmp_path_factory):
    run = tmp_path_factory.mktemp("est_run")
    return micro_model(run_dir=str(run)).fit(micro_dataset)


class TestFitPredict:
    def test_fit_accepts_directory_path(self, micro_dataset, tmp_path):
        model = micro_model(epochs=0, run_dir=str(tmp_path / "r"))
        model.fit(micro_dataset.root)
        assert model.record_ is not None

    def test_predict_shape_and_units(self, fitted, micro_dataset):
        batch = dataio.load_batch(
            micro_dataset,
            micro_dataset.test_ids,
            fitted._configs()[0],
            labeled=True,
        )
        out = fitted.predict(batch)
        assert out.shape == (len(micro_dataset.test_ids), 32, 32)
        # pixels, not normalized units
        assert out.min() >= 0.0 and out.max() <= micro_dataset.d_max

    def test_predict_accepts_samples_and_arrays(self, fitted, micro_dataset):
        sample = dataio.load_sample(micro_dataset, micro_dataset.test_ids[0], 32, 32)
        from_sample = fitted.predict(sample)
        stack = np.stack(
            list(sample.disp_inputs) + [sample.left_intensity, sample.gradient_map]
        )[None]
        from_array = fitted.predict(stack)
        assert np.allclose(from_sample, from_array, atol=1e-5)

    def test_predict_rejects_bad_channel_count(self, fitted):
        with pytest.raises(ShapeError):
            fitted.predict(np.zeros((1, 3, 32, 32), dtype=np.float32))

    def test_score_is_negative_mae(self, fitted, micro_dataset):
        score = fitted.score(micro_dataset)
        assert score < 0
        assert np.isfinite(score)

    def test_unfitted_predict_rejected(self):
        with pytest.raises(ConfigurationError):
            micro_model().predict(np.zeros((1, 4, 32, 32), dtype=np.float32))

    def test_refit_is_reproducible(self, micro_dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("DISPFUSE_DETERMINISTIC", "1")
        a = micro_model(run_dir=str(tmp_path / "a")).fit(micro_dataset)
        b = micro_model(run_dir=str(tmp_path / "b")).fit(micro_dataset)
        for pa, pb in zip(a.refiner_.parameters(), b.refiner_.parameters()):
            assert torch.equal(pa, pb)
