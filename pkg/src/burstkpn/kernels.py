"""Per-pixel kernel stacks: application to bursts and diagnostics.

A kernel stack assigns every output pixel one small filter per burst frame,
shaped [n_frames, k, k, h, w] with k odd and values unconstrained in sign
(no softmax or any other normalization).  Applying a stack filters each
frame with its spatially varying kernels under edge-replicate padding and
averages the filtered frames into the output.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .synth import Burst
from .tensor import Tensor, _pad_edge, _pad_edge_adjoint, _result, as_tensor, mean_axis0

Array = np.ndarray


def _check_stack(frames_shape: tuple[int, ...], kernel_shape: tuple[int, ...]) -> int:
    if len(kernel_shape) != 5:
        raise ValueError(f"kernel stack must be [n, k, k, h, w], got {kernel_shape}")
    n, k, k2, h, w = kernel_shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"kernels must be square and odd, got {k}x{k2}")
    if frames_shape != (n, h, w):
        raise ValueError(
            f"kernel stack {kernel_shape} does not match frames {frames_shape}"
        )
    return k


def filter_frames(frames, kernels) -> Tensor:
    """Filter each frame with its per-pixel kernels; differentiable in both.

    ``frames`` is [n, h, w], ``kernels`` is [n, k, k, h, w]; the output at
    (i, y, x) is the dot product of kernel (i, :, :, y, x) with the k x k
    neighborhood of (y, x) in frame i under edge-replicate padding.
    """
    frames, kernels = as_tensor(frames), as_tensor(kernels)
    if frames.data.ndim != 3:
        raise ValueError(f"frames must be [n, h, w], got {frames.shape}")
    k = _check_stack(frames.shape, kernels.shape)
    n, h, w = frames.shape
    r = k // 2

    fp = _pad_edge(frames.data, r)
    win = sliding_window_view(fp, (k, k), axis=(1, 2))  # [n, h, w, k, k]
    out = np.einsum("nuvhw,nhwuv->nhw", kernels.data, win)

    def bwd(res):
        def run():
            go = res.grad
            if kernels.requires_grad:
                kernels._accumulate(np.einsum("nhw,nhwuv->nuvhw", go, win))
            if frames.requires_grad:
                gfp = np.zeros_like(fp)
                for u in range(k):
                    for v in range(k):
                        gfp[:, u : u + h, v : v + w] += go * kernels.data[:, u, v]
                frames._accumulate(_pad_edge_adjoint(gfp, r))

        return run

    return _result(out, (frames, kernels), bwd)


def apply(burst, kernels) -> tuple[Tensor, Tensor]:
    """Run a kernel stack over a burst.

    Returns (per_frame, output): the n individually filtered frames and
    their mean.  ``burst`` may be a Burst, an [n, h, w] array or a Tensor.
    """
    frames = burst.frames if isinstance(burst, Burst) else burst
    per_frame = filter_frames(frames, kernels)
    return per_frame, mean_axis0(per_frame)


def frame_weight_map(kernels) -> Array:
    """Per-frame, per-pixel L1 mass of the kernels: [n, h, w]."""
    data = kernels.data if isinstance(kernels, Tensor) else np.asarray(kernels)
    return np.abs(data).sum(axis=(1, 2))


def mean_kernels(kernels) -> Array:
    """Tap-wise spatial average of each frame's kernels: [n, k, k]."""
    data = kernels.data if isinstance(kernels, Tensor) else np.asarray(kernels)
    return data.mean(axis=(3, 4))


def alternate_weight_fraction(kernels) -> float:
    """Share of total L1 kernel mass allocated to non-reference frames."""
    wm = frame_weight_map(kernels)
    total = wm.sum()
    if total == 0:
        return 0.0
    return float(wm[1:].sum() / total)


def delta_kernel_stack(n: int, k: int, h: int, w: int, frame: int | None = None) -> Array:
    """Centered-delta stack; apply() then reproduces the burst average.

    With ``frame`` set, only that frame gets a delta scaled by n, so the
    output is that frame alone.
    """
    stack = np.zeros((n, k, k, h, w))
    c = k // 2
    if frame is None:
        stack[:, c, c] = 1.0
    else:
        stack[frame, c, c] = float(n)
    return stack


def baseline_reference(burst: Burst) -> Array:
    """The untouched reference frame."""
    return burst.frames[0]


def baseline_average(burst: Burst) -> Array:
    """Plain per-pixel mean over all frames."""
    return burst.frames.mean(axis=0)
