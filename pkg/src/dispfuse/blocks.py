"""Shared dense-block building blocks and parameter bookkeeping.

Composite layers follow the ReLU -> batch-norm -> convolution ordering; a
dense block concatenates each composite layer's output to its input, growing
the channel count by the block's growth rate per layer.  Transitions change
spatial resolution with 4x4 convolutions and keep the channel count.
"""

import hashlib
import json

import torch
from torch import nn


class CompositeLayer(nn.Module):
    """ReLU -> (BatchNorm) -> 3x3 stride-1 conv emitting ``growth`` channels."""

    def __init__(self, in_channels, growth, use_norm=True):
        super().__init__()
        self.relu = nn.ReLU(inplace=False)
        self.norm = nn.BatchNorm2d(in_channels) if use_norm else nn.Identity()
        self.conv = nn.Conv2d(in_channels, growth, kernel_size=3, stride=1, padding=1)

    def forward(self, x):
        return self.conv(self.norm(self.relu(x)))


class DenseBlock(nn.Module):
    def __init__(self, in_channels, growth, n_layers, use_norm=True):
        super().__init__()
        self.layers = nn.ModuleList(
            CompositeLayer(in_channels + i * growth, growth, use_norm)
            for i in range(n_layers)
        )
        self.out_channels = in_channels + n_layers * growth

    def forward(self, x):
        for layer in self.layers:
            x = torch.cat([x, layer(x)], dim=1)
        return x


class TransitionDown(nn.Module):
    """ReLU -> (BatchNorm) -> 4x4 conv; stride 2 halves, stride 1 keeps size."""

    def __init__(self, channels, stride, use_norm=True):
        super().__init__()
        self.relu = nn.ReLU(inplace=False)
        self.norm = nn.BatchNorm2d(channels) if use_norm else nn.Identity()
        # a 4x4 stride-1 conv needs asymmetric padding to preserve size
        self.pad = nn.Identity() if stride == 2 else nn.ZeroPad2d((1, 2, 1, 2))
        self.conv = nn.Conv2d(
            channels,
            channels,
            kernel_size=4,
            stride=stride,
            padding=1 if stride == 2 else 0,
        )
        self.out_channels = channels

    def forward(self, x):
        return self.conv(self.pad(self.norm(self.relu(x))))


class TransitionUp(nn.Module):
    """ReLU -> BatchNorm -> 4x4 stride-2 transposed conv, doubling resolution."""

    def __init__(self, in_channels, out_channels):
        super().__init__()
        self.relu = nn.ReLU(inplace=False)
        self.norm = nn.BatchNorm2d(in_channels)
        self.conv = nn.ConvTranspose2d(
            in_channels, out_channels, kernel_size=4, stride=2, padding=1
        )
        self.out_channels = out_channels

    def forward(self, x):
        return self.conv(self.norm(self.relu(x)))


def init_parameters(module, std, seed):
    """Gaussian(0, std^2) kernels, zero biases, identity batch-norm affine."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)


def topology(module):
    """Flat layer inventory used for fingerprints and parameter accounting."""
    entries = []
    for name, m in module.named_modules():
        if isinstance(m, nn.Conv2d):
            entries.append(
                {
                    "name": name,
                    "kind": "conv",
                    "in": m.in_channels,
                    "out": m.out_channels,
                    "kernel": list(m.kernel_size),
                    "stride": list(m.stride),
                }
            )
        elif isinstance(m, nn.ConvTranspose2d):
            entries.append(
                {
                    "name": name,
                    "kind": "deconv",
                    "in": m.in_channels,
                    "out": m.out_channels,
                    "kernel": list(m.kernel_size),
                    "stride": list(m.stride),
                }
            )
        elif isinstance(m, nn.BatchNorm2d):
            entries.append({"name": name, "kind": "batchnorm", "channels": m.num_features})
    return entries


def fingerprint(module, extra=None):
    payload = {"layers": topology(module), "extra": extra}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8"))
    return digest.hexdigest()[:16]
