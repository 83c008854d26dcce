"""Domain types, normalization conventions and the image-gradient operator.

Disparities travel through the pipeline normalized to [-1, 1] relative to a
per-dataset maximum disparity ``d_max`` (in pixels).  A raw disparity of 0 is
the "no measurement" value, so holes map to -1 after normalization.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .validation import (
    check_2d,
    check_multiple_of_32,
    check_nonnegative,
    check_positive,
)

GAN_JS = "js"
GAN_WGAN_GP = "wgan_gp"
GAN_KINDS = (GAN_JS, GAN_WGAN_GP)

MODE_SUPERVISED = "supervised"
MODE_SEMI = "semi"
MODES = (MODE_SUPERVISED, MODE_SEMI)


@dataclass(frozen=True)
class LossConfig:
    """Weights and switches for the composite training objective.

    ``alpha`` scales the edge weight of the data term, ``beta`` the edge
    weight of the smoothness term, ``theta1..theta3`` the three objective
    components, ``lambda_gp`` the critic gradient penalty.  ``num_scales``
    is the number of discriminator score maps used (1..5).
    """

    alpha: float = 1.0
    beta: float = 650.0
    theta1: float = 395.0
    theta2: float = 5.0
    theta3: float = 1.0
    lambda_gp: float = 1e-4
    num_scales: int = 5
    gan_kind: str = GAN_WGAN_GP
    mode: str = MODE_SUPERVISED

    def __post_init__(self):
        for name in ("alpha", "beta", "theta1", "theta2", "theta3"):
            check_nonnegative(getattr(self, name), name)
        check_positive(self.lambda_gp, "lambda_gp")
        if not 1 <= self.num_scales <= 5:
            raise ConfigurationError(
                f"num_scales must be in [1, 5], got {self.num_scales}"
            )
        if self.gan_kind not in GAN_KINDS:
            raise ConfigurationError(f"unknown gan_kind {self.gan_kind!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown mode {self.mode!r}")


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters shared by the refiner and discriminator.

    ``c1`` raw disparity inputs plus ``c2`` auxiliary channels (intensity and
    its gradient) form the conditioning stack.  ``lg``/``ld`` are the channel
    counts after the first convolution of the refiner/discriminator.
    ``growth_rates`` optionally overrides the per-dense-block growth; when
    None every refiner block grows by ``lg`` and every discriminator block
    by ``ld``.
    """

    batch: int = 4
    height: int = 480
    width: int = 640
    c1: int = 2
    c2: int = 2
    lg: int = 12
    ld: int = 12
    growth_rates: tuple = None
    dropout_rate: float = 0.5
    init_std: float = 0.02

    def __post_init__(self):
        if self.batch < 1:
            raise ConfigurationError(f"batch must be >= 1, got {self.batch}")
        check_multiple_of_32(self.height, "height")
        check_multiple_of_32(self.width, "width")
        if self.c1 < 2:
            raise ConfigurationError(f"c1 must be >= 2, got {self.c1}")
        if self.c2 < 0:
            raise ConfigurationError(f"c2 must be >= 0, got {self.c2}")
        check_positive(self.lg, "lg")
        check_positive(self.ld, "ld")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigurationError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )
        check_positive(self.init_std, "init_std")
        if self.growth_rates is not None:
            object.__setattr__(self, "growth_rates", tuple(self.growth_rates))
            if any(g < 1 for g in self.growth_rates):
                raise ConfigurationError("growth_rates must be positive")

    def growth_for(self, base, n_blocks):
        """Per-block growth list: the override cycled, or ``base`` repeated."""
        if self.growth_rates is None:
            return [base] * n_blocks
        g = list(self.growth_rates)
        return [g[i % len(g)] for i in range(n_blocks)]


@dataclass
class FusionSample:
    """One training/eval unit in normalized form.

    ``disp_inputs`` holds the c1 raw disparity maps after clipping to
    [0, d_max] and mapping to [-1, 1]; ``gt_disp`` is None for unlabeled
    samples, in which case ``valid_mask`` is all-false.
    """

    sample_id: str
    left_intensity: np.ndarray
    gradient_map: np.ndarray
    disp_inputs: list
    d_max: float
    gt_disp: np.ndarray = None
    valid_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        h, w = self.left_intensity.shape
        if self.valid_mask is None:
            if self.gt_disp is None:
                self.valid_mask = np.zeros((h, w), dtype=bool)
            else:
                self.valid_mask = np.ones((h, w), dtype=bool)
        if self.gt_disp is None:
            self.valid_mask = np.zeros((h, w), dtype=bool)

    @property
    def shape(self):
        return self.left_intensity.shape

    def validate(self):
        h, w = self.shape
        check_multiple_of_32(h, f"sample {self.sample_id} height")
        check_multiple_of_32(w, f"sample {self.sample_id} width")
        check_positive(self.d_max, "d_max")
        fields = [("left_intensity", self.left_intensity)]
        fields += [(f"disp_inputs[{i}]", d) for i, d in enumerate(self.disp_inputs)]
        if self.gt_disp is not None:
            fields.append(("gt_disp", self.gt_disp))
        for name, arr in fields:
            check_2d(arr, name)
            if arr.shape != (h, w):
                raise ConfigurationError(
                    f"{name} shape {arr.shape} != intensity shape {(h, w)}"
                )
            lo, hi = float(arr.min()), float(arr.max())
            if lo < -1 - 1e-6 or hi > 1 + 1e-6:
                raise ConfigurationError(
                    f"{name} outside [-1, 1]: range [{lo:.4g}, {hi:.4g}]"
                )
        if self.gradient_map.shape != (h, w) or self.gradient_map.min() < 0:
            raise ConfigurationError("gradient_map must be H x W and >= 0")
        if self.gt_disp is None and self.valid_mask.any():
            raise ConfigurationError("valid_mask must be all-false without gt_disp")
        return self


def normalize_disparity(raw, d_max):
    """Map pixel disparities to [-1, 1]; values are clipped to [0, d_max] first."""
    if d_max <= 0:
        raise ConfigurationError(f"d_max must be positive, got {d_max}")
    raw = np.asarray(raw, dtype=np.float64)
    return 2.0 * np.clip(raw, 0.0, d_max) / d_max - 1.0


def denormalize_disparity(norm, d_max):
    """Inverse of :func:`normalize_disparity` on [0, d_max]."""
    if d_max <= 0:
        raise ConfigurationError(f"d_max must be positive, got {d_max}")
    return (np.asarray(norm, dtype=np.float64) + 1.0) * (d_max / 2.0)


def image_gradient(intensity):
    """Forward-difference gradient magnitude |dx| + |dy|.

    The last column/row replicate their neighbor, i.e. the difference there
    is zero, so edge weights based on this map default to exp(0) = 1 at the
    image border.
    """
    img = check_2d(np.asarray(intensity, dtype=np.float64), "intensity")
    if not np.isfinite(img).all():
        raise ConfigurationError("intensity must be finite")
    dx = np.zeros_like(img)
    dy = np.zeros_like(img)
    dx[:, :-1] = img[:, 1:] - img[:, :-1]
    dy[:-1, :] = img[1:, :] - img[:-1, :]
    return np.abs(dx) + np.abs(dy)
