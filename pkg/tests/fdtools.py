"""Finite-difference oracles shared by the loss tests and the acceptance suite."""

import numpy as np
import torch


def central_difference_gradient(f, x, h=1e-6):
    """Per-coordinate central differences of scalar f at x (float64 tensor)."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.numel()):
        orig = flat[k].item()
        flat[k] = orig + h
        fp = float(f(x))
        flat[k] = orig - h
        fm = float(f(x))
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric):
    diff = (analytic - numeric).norm().item()
    scale = numeric.norm().item()
    return diff / max(scale, 1e-300)


class FixedRng:
    """Stand-in for numpy Generator drawing a fixed epsilon per sample."""

    def __init__(self, value):
        self.value = value

    def random(self, n):
        return np.full(n, self.value)
