import numpy as np
import pytest

from dispfuse import synthdata
from dispfuse.core import LossConfig, NetConfig
from dispfuse.trainer import TrainConfig


def micro_net_cfg(**overrides):
    defaults = dict(batch=2, height=32, width=32, lg=4, ld=4, dropout_rate=0.5)
    defaults.update(overrides)
    return NetConfig(**defaults)


def micro_loss_cfg(**overrides):
    defaults = dict(num_scales=2, theta1=395.0, theta2=5.0, theta3=1.0)
    defaults.update(overrides)
    return LossConfig(**defaults)


def micro_train_cfg(**overrides):
    defaults = dict(epochs=1, seed=0, checkpoint_every=0)
    defaults.update(overrides)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def micro_dataset(tmp_path_factory):
    """Tiny 32x32 dataset: 6 labeled, 2 unlabeled, 2 test samples."""
    out = tmp_path_factory.mktemp("micro_ds")
    spec = synthdata.SceneSpec(height=32, width=32, num_objects=2, seed=11)
    manifest = synthdata.build_dataset(
        8,
        spec,
        synthdata.default_sensors(),
        str(out),
        d_max=64.0,
        n_test=2,
        unlabeled_frac=0.25,
        root_seed=11,
    )
    return manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
