"""Scikit-learn style front end for the fusion model.

``DisparityFusionModel`` exposes the train/apply cycle as ``fit`` /
``predict`` / ``score`` with flat constructor hyperparameters, so the model
clones, grid-searches and pipelines like any other estimator.  ``fit``
consumes a dataset directory or Manifest; ``predict`` accepts FusionSamples,
an assembled Batch, or a raw (b, c1+c2, H, W) stack and returns refined
disparity in pixels.
"""

import tempfile

import numpy as np
import torch
from sklearn.base import BaseEstimator

from . import dataio, evalbench, trainer
from .core import FusionSample, LossConfig, NetConfig, denormalize_disparity
from .errors import ConfigurationError
from .validation import check_input_stack

DEFAULT_PREDICT_D_MAX = 64.0


class DisparityFusionModel(BaseEstimator):
    def __init__(
        self,
        mode="supervised",
        gan_kind="wgan_gp",
        num_scales=5,
        alpha=1.0,
        beta=650.0,
        theta1=395.0,
        theta2=5.0,
        theta3=1.0,
        lambda_gp=1e-4,
        lg=12,
        ld=12,
        growth_rates=None,
        dropout_rate=0.5,
        batch=4,
        height=96,
        width=128,
        c1=2,
        c2=2,
        epochs=10,
        lr_start=0.005,
        lr_end=0.0001,
        adam_momentum=0.5,
        adam_beta2=0.999,
        seed=0,
        augment=True,
        checkpoint_every=0,
        early_stop_mae=None,
        run_dir=None,
    ):
        self.mode = mode
        self.gan_kind = gan_kind
        self.num_scales = num_scales
        self.alpha = alpha
        self.beta = beta
        self.theta1 = theta1
        self.theta2 = theta2
        self.theta3 = theta3
        self.lambda_gp = lambda_gp
        self.lg = lg
        self.ld = ld
        self.growth_rates = growth_rates
        self.dropout_rate = dropout_rate
        self.batch = batch
        self.height = height
        self.width = width
        self.c1 = c1
        self.c2 = c2
        self.epochs = epochs
        self.lr_start = lr_start
        self.lr_end = lr_end
        self.adam_momentum = adam_momentum
        self.adam_beta2 = adam_beta2
        self.seed = seed
        self.augment = augment
        self.checkpoint_every = checkpoint_every
        self.early_stop_mae = early_stop_mae
        self.run_dir = run_dir

    # -- config assembly ----------------------------------------------------

    def _configs(self):
        net = NetConfig(
            batch=self.batch,
            height=self.height,
            width=self.width,
            c1=self.c1,
            c2=self.c2,
            lg=self.lg,
            ld=self.ld,
            growth_rates=self.growth_rates,
            dropout_rate=self.dropout_rate,
        )
        loss = LossConfig(
            alpha=self.alpha,
            beta=self.beta,
            theta1=self.theta1,
            theta2=self.theta2,
            theta3=self.theta3,
            lambda_gp=self.lambda_gp,
            num_scales=self.num_scales,
            gan_kind=self.gan_kind,
            mode=self.mode,
        )
        train = trainer.TrainConfig(
            epochs=self.epochs,
            lr_start=self.lr_start,
            lr_end=self.lr_end,
            adam_momentum=self.adam_momentum,
            adam_beta2=self.adam_beta2,
            seed=self.seed,
            mode=self.mode,
            checkpoint_every=self.checkpoint_every,
            augment=self.augment,
            early_stop_mae=self.early_stop_mae,
        )
        return net, loss, train

    @staticmethod
    def _as_manifest(X):
        if isinstance(X, dataio.Manifest):
            return X
        if isinstance(X, str):
            return dataio.load_manifest(X)
        raise ConfigurationError(
            "fit expects a dataset directory path or a Manifest, "
            f"got {type(X).__name__}"
        )

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y=None):
        """Train on a dataset directory or Manifest; returns self."""
        manifest = self._as_manifest(X)
        net, loss, train = self._configs()
        run_dir = self.run_dir or tempfile.mkdtemp(prefix="dispfuse-fit-")
        t = trainer.Trainer(manifest, net, loss, train, run_dir)
        self.record_ = t.fit()
        self.refiner_ = t.refiner
        self.discriminator_ = t.discriminator
        self.manifest_ = manifest
        self.run_dir_ = run_dir
        self.d_max_ = manifest.d_max
        return self

    def _check_fitted(self):
        if not hasattr(self, "refiner_"):
            raise ConfigurationError("model is not fitted; call fit first")

    def _assemble(self, X):
        if isinstance(X, dataio.Batch):
            return X.inputs
        if isinstance(X, FusionSample):
            X = [X]
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], FusionSample):
            return dataio.batch_from_samples(list(X), labeled=False).inputs
        stack = check_input_stack(np.asarray(X, dtype=np.float32), self.c1, self.c2)
        return torch.from_numpy(stack)

    def predict(self, X):
        """Refined disparity in pixels, shape (b, H, W)."""
        self._check_fitted()
        inputs = self._assemble(X)
        self.refiner_.train(False)
        with torch.no_grad():
            refined = self.refiner_(inputs)
        d_max = getattr(self, "d_max_", None) or DEFAULT_PREDICT_D_MAX
        return denormalize_disparity(refined[:, 0].numpy(), d_max)

    def score(self, X, y=None):
        """Negative mean test MAE in pixels (higher is better)."""
        self._check_fitted()
        manifest = self._as_manifest(X)
        net, _, _ = self._configs()
        ids = manifest.test_ids or manifest.labeled_ids
        values = []
        for sample_id in ids:
            sample = dataio.load_sample(
                manifest, sample_id, net.height, net.width, net.c1, labeled=True
            )
            batch = dataio.batch_from_samples([sample], labeled=True)
            with torch.no_grad():
                self.refiner_.train(False)
                pred = self.refiner_(batch.inputs)
            values.append(
                evalbench.mae(
                    pred[0, 0].numpy(),
                    batch.gt[0, 0].numpy(),
                    batch.mask[0, 0].numpy(),
                    manifest.d_max,
                )
            )
        return -float(np.mean(values))
