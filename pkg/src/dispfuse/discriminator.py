"""Multi-scale patch discriminator.

Five dense-block stages score the disparity under test (real or refined)
conditioned on the input stack, emitting one single-channel score map after
each stage's transition.  Transitions stride 2 except the third, which
strides 1, so with full scale count the maps sit at 1/2, 1/4, 1/4, 1/8 and
1/16 resolution.  In JS mode each map passes through a sigmoid and batch
norm is used; in WGAN-GP mode scores stay unbounded and batch norm is
dropped, because the gradient penalty is defined per-sample and cross-batch
coupling would corrupt it.
"""

import torch
from torch import nn

from .blocks import DenseBlock, TransitionDown, fingerprint, init_parameters
from .core import GAN_JS, GAN_KINDS
from .errors import ConfigurationError, ShapeError

STAGE_STRIDES = (2, 2, 1, 2, 2)
LAYERS_PER_BLOCK = 4


class DiscriminatorNet(nn.Module):
    def __init__(self, cfg, gan_kind, num_scales=5):
        super().__init__()
        if gan_kind not in GAN_KINDS:
            raise ConfigurationError(f"unknown gan_kind {gan_kind!r}")
        if not 1 <= num_scales <= len(STAGE_STRIDES):
            raise ConfigurationError(f"num_scales must be in [1, 5], got {num_scales}")
        self.cfg = cfg
        self.gan_kind = gan_kind
        self.num_scales = num_scales
        self.strides = STAGE_STRIDES[:num_scales]

        n_stride2 = sum(1 for s in self.strides if s == 2)
        self.total_downscale = 2**n_stride2
        if cfg.height // self.total_downscale < 1 or cfg.width // self.total_downscale < 1:
            raise ConfigurationError(
                f"resolution {cfg.height}x{cfg.width} too small for "
                f"{n_stride2} stride-2 reductions"
            )

        use_norm = gan_kind == GAN_JS
        in_channels = cfg.c1 + cfg.c2 + 1
        growths = cfg.growth_for(cfg.ld, num_scales)

        self.conv_in = nn.Conv2d(in_channels, cfg.ld, kernel_size=3, stride=1, padding=1)
        ch = cfg.ld
        self.blocks = nn.ModuleList()
        self.trans = nn.ModuleList()
        self.heads = nn.ModuleList()
        for i in range(num_scales):
            block = DenseBlock(ch, growths[i], LAYERS_PER_BLOCK, use_norm=use_norm)
            ch = block.out_channels
            self.blocks.append(block)
            self.trans.append(TransitionDown(ch, stride=self.strides[i], use_norm=use_norm))
            self.heads.append(nn.Conv2d(ch, 1, kernel_size=1))

    def forward(self, condition_stack, disparity):
        if condition_stack.ndim != 4 or disparity.ndim != 4:
            raise ShapeError("discriminator inputs must be (b,c,H,W)")
        expected = self.cfg.c1 + self.cfg.c2
        if condition_stack.shape[1] != expected:
            raise ShapeError(
                f"condition stack has {condition_stack.shape[1]} channels, "
                f"expected {expected}"
            )
        if disparity.shape[1] != 1:
            raise ShapeError(f"disparity must have 1 channel, got {disparity.shape[1]}")
        if condition_stack.shape[2:] != disparity.shape[2:]:
            raise ShapeError(
                f"condition {tuple(condition_stack.shape[2:])} and disparity "
                f"{tuple(disparity.shape[2:])} resolutions differ"
            )
        h, w = disparity.shape[2], disparity.shape[3]
        if h % self.total_downscale or w % self.total_downscale:
            raise ShapeError(
                f"input size {h}x{w} must be divisible by {self.total_downscale}"
            )

        x = self.conv_in(torch.cat([condition_stack, disparity], dim=1))
        maps = []
        for block, trans, head in zip(self.blocks, self.trans, self.heads):
            x = trans(block(x))
            score = head(x)
            if self.gan_kind == GAN_JS:
                score = torch.sigmoid(score)
            maps.append(score)
        return maps

    def scale_geometry(self, scale_index):
        """(receptive field, stride) of score map ``scale_index`` in input pixels."""
        rf, jump = 1, 1
        rf += 2 * jump  # 3x3 input conv
        for i in range(scale_index + 1):
            rf += 2 * jump * LAYERS_PER_BLOCK  # 3x3 composite convs
            rf += 3 * jump  # 4x4 transition
            jump *= self.strides[i]
        return rf, jump

    def fingerprint(self):
        return fingerprint(
            self, extra={"net": "discriminator", "gan_kind": self.gan_kind}
        )


def build_discriminator(cfg, gan_kind, seed=0, num_scales=5):
    """Construct and Gaussian-initialize a discriminator (deterministic in seed)."""
    net = DiscriminatorNet(cfg, gan_kind, num_scales)
    init_parameters(net, cfg.init_std, seed)
    return net


def discriminator_forward(net, condition_stack, disparity, training=False):
    net.train(training)
    return net(condition_stack, disparity)
