"""The refiner: a dense-block encoder/decoder with skip connections.

Input is the (c1+c2)-channel conditioning stack; output is one disparity
channel at input resolution, squashed to (-1, 1) by tanh to match the data
contract.  Three encoder stages halve resolution, three decoder stages
restore it, each decoder stage concatenating the same-resolution encoder
feature map before its dense block.  Dropout lives only in the decoder and
is disabled outside training mode, so inference is deterministic.
"""

import torch
from torch import nn

from .blocks import DenseBlock, TransitionDown, TransitionUp, fingerprint, init_parameters
from .errors import ShapeError

N_STAGES = 3


class RefinerNet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        in_channels = cfg.c1 + cfg.c2
        growths = cfg.growth_for(cfg.lg, 2 * N_STAGES)

        self.conv_in = nn.Conv2d(in_channels, cfg.lg, kernel_size=3, stride=1, padding=1)
        ch = cfg.lg

        stage_inputs = []  # encoder stage input widths, mirrored by the decoder
        skip_channels = []
        self.enc_blocks = nn.ModuleList()
        self.enc_trans = nn.ModuleList()
        for i in range(N_STAGES):
            stage_inputs.append(ch)
            block = DenseBlock(ch, growths[i], n_layers=2)
            ch = block.out_channels
            skip_channels.append(ch)
            self.enc_blocks.append(block)
            self.enc_trans.append(TransitionDown(ch, stride=2))

        self.dec_up = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        self.dec_drop = nn.ModuleList()
        for i in range(N_STAGES):
            up = TransitionUp(ch, stage_inputs[N_STAGES - 1 - i])
            ch = up.out_channels + skip_channels[N_STAGES - 1 - i]
            block = DenseBlock(ch, growths[N_STAGES + i], n_layers=2)
            ch = block.out_channels
            self.dec_up.append(up)
            self.dec_blocks.append(block)
            self.dec_drop.append(nn.Dropout(cfg.dropout_rate))

        self.conv_out = nn.Conv2d(ch, 1, kernel_size=3, stride=1, padding=1)

    def forward(self, stack):
        if stack.ndim != 4:
            raise ShapeError(f"refiner input must be (b,c,H,W), got {tuple(stack.shape)}")
        expected = self.cfg.c1 + self.cfg.c2
        if stack.shape[1] != expected:
            raise ShapeError(
                f"refiner input has {stack.shape[1]} channels, expected {expected}"
            )
        h, w = stack.shape[2], stack.shape[3]
        factor = 2**N_STAGES
        if h % factor or w % factor:
            raise ShapeError(
                f"refiner input size {h}x{w} must be divisible by {factor}"
            )

        x = self.conv_in(stack)
        skips = []
        for block, trans in zip(self.enc_blocks, self.enc_trans):
            x = block(x)
            skips.append(x)
            x = trans(x)
        for up, block, drop, skip in zip(
            self.dec_up, self.dec_blocks, self.dec_drop, reversed(skips)
        ):
            x = up(x)
            x = block(torch.cat([x, skip], dim=1))
            x = drop(x)
        return torch.tanh(self.conv_out(x))

    def fingerprint(self):
        return fingerprint(self, extra={"net": "refiner"})


def build_refiner(cfg, seed=0):
    """Construct and Gaussian-initialize a refiner (deterministic in seed)."""
    net = RefinerNet(cfg)
    init_parameters(net, cfg.init_std, seed)
    return net


def refiner_forward(net, input_stack, training=False):
    """Run the refiner with dropout/batch statistics switched per ``training``."""
    net.train(training)
    return net(input_stack)
