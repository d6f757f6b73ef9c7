"""Training losses on display-referred (sRGB) intensities.

The basic loss compares images after white-level restoration and the sRGB
transfer: a mean-squared intensity term plus a mean-absolute term on
finite-difference gradients.  The annealed loss adds per-frame copies of
the basic loss whose weight beta * alpha^t decays geometrically, steering
early training toward aligning each frame individually before the averaged
output dominates.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import gamma
from .tensor import Tensor, _result, absolute, as_tensor, reduce_mean, slice_axis0


@dataclass(frozen=True)
class LossWeights:
    """Term weights: lambda2 scales the intensity term, lambda1 the gradient term."""

    lambda2: float = 1.0
    lambda1: float = 1.0

    def __post_init__(self):
        if self.lambda2 < 0 or self.lambda1 < 0:
            raise ValueError(
                f"loss weights must be non-negative, got "
                f"lambda2={self.lambda2}, lambda1={self.lambda1}"
            )


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric decay beta * alpha^t of the per-frame term weight."""

    beta: float = 100.0
    alpha: float = 0.9998
    t: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError(f"beta must be non-negative, got {self.beta}")
        if not (0 < self.alpha < 1):
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.t < 0:
            raise ValueError(f"iteration must be non-negative, got {self.t}")

    def at(self, t: int) -> "AnnealSchedule":
        return replace(self, t=t)


def anneal_weight(sched: AnnealSchedule) -> float:
    return sched.beta * sched.alpha**sched.t


def srgb(x) -> Tensor:
    """Differentiable sRGB transfer; negatives take the linear branch."""
    x = as_tensor(x)
    slope = gamma.srgb_slope(x.data)

    def bwd(out):
        def run():
            x._accumulate(out.grad * slope)

        return run

    return _result(gamma.srgb(x.data), (x,), bwd)


def diff_h(x) -> Tensor:
    """Horizontal neighbor differences: out[y, x] = in[y, x+1] - in[y, x]."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] < 2:
        raise ValueError(f"diff_h needs a 2-d image at least 2 wide, got {x.shape}")

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[:, 1:] += out.grad
            g[:, :-1] -= out.grad
            x._accumulate(g)

        return run

    return _result(x.data[:, 1:] - x.data[:, :-1], (x,), bwd)


def diff_v(x) -> Tensor:
    """Vertical neighbor differences: out[y, x] = in[y+1, x] - in[y, x]."""
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"diff_v needs a 2-d image at least 2 tall, got {x.shape}")

    def bwd(out):
        def run():
            g = np.zeros_like(x.data)
            g[1:, :] += out.grad
            g[:-1, :] -= out.grad
            x._accumulate(g)

        return run

    return _result(x.data[1:, :] - x.data[:-1, :], (x,), bwd)


def grad_op(img) -> tuple[Tensor, Tensor]:
    """Valid-region horizontal and vertical finite differences."""
    img = as_tensor(img)
    if img.data.ndim != 2 or img.shape[0] < 2 or img.shape[1] < 2:
        raise ValueError(f"grad_op needs an image at least 2x2, got {img.shape}")
    return diff_h(img), diff_v(img)


def basic_loss(output, target, weights: LossWeights = LossWeights(), scale: float = 1.0) -> Tensor:
    """Intensity + gradient loss after white-level restoration and sRGB.

    Both norms are averaged over their element counts (the two gradient
    orientations pool into one average), so weights stay comparable across
    patch sizes.
    """
    output, target = as_tensor(output), as_tensor(target)
    if output.shape != target.shape:
        raise ValueError(f"shape mismatch: output {output.shape} vs target {target.shape}")
    if scale <= 0:
        raise ValueError(f"white-level scale must be positive, got {scale}")

    a = srgb(output * (1.0 / scale))
    b = srgb(target * (1.0 / scale))
    d = a - b
    l2 = reduce_mean(d * d)

    dh = diff_h(a) - diff_h(b)
    dv = diff_v(a) - diff_v(b)
    nh, nv = dh.data.size, dv.data.size
    l1 = (nh / (nh + nv)) * reduce_mean(absolute(dh)) + (nv / (nh + nv)) * reduce_mean(
        absolute(dv)
    )
    return weights.lambda2 * l2 + weights.lambda1 * l1


def annealed_loss_terms(
    per_frame,
    output,
    target,
    sched: AnnealSchedule,
    weights: LossWeights = LossWeights(),
    scale: float = 1.0,
) -> tuple[Tensor, Tensor, Tensor, float]:
    """(total, output term, per-frame term sum, current weight).

    ``per_frame`` stacks the individually filtered frames as [n, h, w]; the
    per-frame sum is always built (and measured) even when the weight is 0.
    """
    per_frame = as_tensor(per_frame)
    if per_frame.data.ndim != 3:
        raise ValueError(f"per_frame must be [n, h, w], got {per_frame.shape}")
    base = basic_loss(output, target, weights, scale)
    frame_sum = basic_loss(slice_axis0(per_frame, 0), target, weights, scale)
    for i in range(1, per_frame.shape[0]):
        frame_sum = frame_sum + basic_loss(slice_axis0(per_frame, i), target, weights, scale)
    w = anneal_weight(sched)
    return base + w * frame_sum, base, frame_sum, w


def annealed_loss(per_frame, output, target, sched, weights=LossWeights(), scale=1.0) -> Tensor:
    total, _, _, _ = annealed_loss_terms(per_frame, output, target, sched, weights, scale)
    return total
