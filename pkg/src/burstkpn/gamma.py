"""The sRGB transfer function and its exact inverse (plain numpy).

Display values relate to linear intensity through a piecewise curve: a
linear toe below a small knee, a shifted power law above it.  Negative
inputs route through the linear branch, which keeps the map and its slope
defined everywhere (a plain power law is not).

The differentiable version lives in ``losses``; this module is the shared
scalar math.
"""

from __future__ import annotations

import numpy as np

A = 0.055
EXPONENT = 2.4
LINEAR_KNEE = 0.0031308
DISPLAY_KNEE = 12.92 * LINEAR_KNEE  # ~0.040449936
LINEAR_SLOPE = 12.92


def srgb(x):
    """Linear intensity to display value; defined for all real inputs."""
    x = np.asarray(x)
    lo = LINEAR_SLOPE * x
    # clamp inside the power so the unselected branch never sees negatives
    hi = (1 + A) * np.power(np.maximum(x, LINEAR_KNEE), 1.0 / EXPONENT) - A
    return np.where(x <= LINEAR_KNEE, lo, hi)


def srgb_slope(x):
    """Elementwise derivative of ``srgb``; bounded, linear-branch value at the knee."""
    x = np.asarray(x)
    hi = (1 + A) / EXPONENT * np.power(np.maximum(x, LINEAR_KNEE), 1.0 / EXPONENT - 1.0)
    return np.where(x <= LINEAR_KNEE, LINEAR_SLOPE, hi)


def srgb_inverse(x):
    """Display value to linear intensity; exact inverse of ``srgb``."""
    x = np.asarray(x)
    lo = x / LINEAR_SLOPE
    hi = np.power((np.maximum(x, DISPLAY_KNEE) + A) / (1 + A), EXPONENT)
    return np.where(x <= DISPLAY_KNEE, lo, hi)
