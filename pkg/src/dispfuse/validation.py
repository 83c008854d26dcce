"""Input validation helpers used by the public entry points."""

import numpy as np

from .errors import ConfigurationError, ShapeError


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ConfigurationError(f"{name} must be positive, got {value!r}")
    return value


def check_nonnegative(value, name):
    if not np.isfinite(value) or value < 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value!r}")
    return value


def check_multiple_of_32(value, name):
    if value <= 0 or value % 32 != 0:
        raise ConfigurationError(
            f"{name} must be a positive multiple of 32, got {value!r}"
        )
    return value


def check_2d(arr, name):
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array, got shape {arr.shape}")
    return arr


def check_same_shape(a, b, name_a, name_b):
    if np.shape(a) != np.shape(b):
        raise ShapeError(
            f"{name_a} shape {np.shape(a)} != {name_b} shape {np.shape(b)}"
        )


def check_normalized(arr, name, lo=-1.0, hi=1.0, tol=1e-6):
    arr = np.asarray(arr)
    if arr.size and (arr.min() < lo - tol or arr.max() > hi + tol):
        raise ShapeError(
            f"{name} must lie in [{lo}, {hi}], got range "
            f"[{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_input_stack(stack, c1, c2):
    """Validate a (b, c1+c2, H, W) refiner input stack.

    Channel order is [disp_1..disp_c1, intensity, gradient]; all channels
    except the gradient must be normalized to [-1, 1] and H, W must be
    multiples of 32.
    """
    stack = np.asarray(stack)
    if stack.ndim == 3:
        stack = stack[None]
    if stack.ndim != 4:
        raise ShapeError(f"input stack must be 4-D (b,c,H,W), got {stack.shape}")
    if stack.shape[1] != c1 + c2:
        raise ShapeError(
            f"input stack has {stack.shape[1]} channels, expected c1+c2={c1 + c2}"
        )
    check_multiple_of_32(stack.shape[2], "stack height")
    check_multiple_of_32(stack.shape[3], "stack width")
    check_normalized(stack[:, : c1 + 1], "stack disparity/intensity channels")
    return stack
