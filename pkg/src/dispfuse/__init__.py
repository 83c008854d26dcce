"""dispfuse: adversarial fusion of raw disparity maps.

A refiner network merges two raw disparity inputs with intensity and
gradient evidence into one refined disparity map, trained against a
multi-scale patch discriminator in supervised or semi-supervised mode.
"""

from .core import (
    GAN_JS,
    GAN_WGAN_GP,
    MODE_SEMI,
    MODE_SUPERVISED,
    FusionSample,
    LossConfig,
    NetConfig,
    denormalize_disparity,
    image_gradient,
    normalize_disparity,
)
from .dataio import Batch, Manifest, load_batch, load_manifest, read_pfm, write_pfm
from .discriminator import DiscriminatorNet, build_discriminator, discriminator_forward
from .estimator import DisparityFusionModel
from .refiner import RefinerNet, build_refiner, refiner_forward
from .synthdata import SceneSpec, SensorModel, build_dataset, corrupt, generate_scene
from .trainer import RunRecord, TrainConfig, Trainer, fit, lr_at

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "DiscriminatorNet",
    "DisparityFusionModel",
    "FusionSample",
    "GAN_JS",
    "GAN_WGAN_GP",
    "LossConfig",
    "MODE_SEMI",
    "MODE_SUPERVISED",
    "Manifest",
    "NetConfig",
    "RefinerNet",
    "RunRecord",
    "SceneSpec",
    "SensorModel",
    "TrainConfig",
    "Trainer",
    "build_dataset",
    "build_discriminator",
    "build_refiner",
    "corrupt",
    "denormalize_disparity",
    "discriminator_forward",
    "fit",
    "generate_scene",
    "image_gradient",
    "load_batch",
    "load_manifest",
    "lr_at",
    "normalize_disparity",
    "read_pfm",
    "refiner_forward",
    "write_pfm",
]
