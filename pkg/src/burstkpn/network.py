"""U-shaped encoder-decoder predicting per-pixel kernel stacks.

Burst frames enter as input channels (plus one channel for the per-pixel
noise stddev map unless the model is blind).  Each encoder level is two
3x3 conv+ReLU blocks followed by 2x average pooling; the decoder mirrors
it with 2x bilinear upsampling and a skip concatenation from the matching
encoder level.  The kernel head is a 1x1 convolution to k*k*n_frames
channels reshaped into a [n, k, k, h, w] stack with no output
normalization; the direct-synthesis head swaps the reshape for three more
3x3 conv+ReLU layers and a single-channel 1x1 convolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import Burst
from .tensor import (
    Tensor,
    as_tensor,
    avg_pool2,
    bilinear_upsample2,
    concat_channels,
    conv2d,
    relu,
    reshape,
)

KERNEL_HEAD = "kernels"
DIRECT_HEAD = "direct"


@dataclass(frozen=True)
class NetConfig:
    levels: int = 2
    widths: tuple[int, ...] = (32, 64)
    k: int = 3
    n_frames: int = 4
    noise_aware: bool = True
    head: str = KERNEL_HEAD

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if len(self.widths) != self.levels:
            raise ValueError(
                f"widths must have one entry per level, got {len(self.widths)} "
                f"for {self.levels} levels"
            )
        if any(w < 1 for w in self.widths):
            raise ValueError(f"widths must be positive, got {self.widths}")
        if self.k < 1 or self.k % 2 == 0:
            raise ValueError(f"kernel extent must be odd, got {self.k}")
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.head not in (KERNEL_HEAD, DIRECT_HEAD):
            raise ValueError(f"head must be '{KERNEL_HEAD}' or '{DIRECT_HEAD}', got {self.head!r}")

    @property
    def in_channels(self) -> int:
        return self.n_frames + (1 if self.noise_aware else 0)

    @property
    def out_channels(self) -> int:
        return self.k * self.k * self.n_frames


def mini_net_config(**overrides) -> NetConfig:
    args = dict(levels=2, widths=(32, 64), k=3, n_frames=4)
    args.update(overrides)
    return NetConfig(**args)


def full_net_config(**overrides) -> NetConfig:
    args = dict(levels=4, widths=(64, 128, 256, 512), k=5, n_frames=8)
    args.update(overrides)
    return NetConfig(**args)


def layer_plan(cfg: NetConfig) -> list[tuple[str, int, int, int]]:
    """Deterministic (name, in_channels, out_channels, kernel) listing."""
    plan = []
    cin = cfg.in_channels
    for lvl, width in enumerate(cfg.widths):
        plan.append((f"enc{lvl}.conv0", cin, width, 3))
        plan.append((f"enc{lvl}.conv1", width, width, 3))
        cin = width
    for lvl in reversed(range(cfg.levels)):
        width = cfg.widths[lvl]
        plan.append((f"dec{lvl}.conv0", cin + width, width, 3))
        plan.append((f"dec{lvl}.conv1", width, width, 3))
        cin = width
    if cfg.head == KERNEL_HEAD:
        plan.append(("head.conv0", cin, cfg.out_channels, 1))
    else:
        for i in range(3):
            plan.append((f"head.conv{i}", cin, cfg.widths[0], 3))
            cin = cfg.widths[0]
        plan.append(("head.conv3", cin, 1, 1))
    return plan


def init_params(
    cfg: NetConfig,
    rng: np.random.Generator,
    zero: bool = False,
    dtype=np.float32,
) -> dict[str, Tensor]:
    """Fan-in-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases.

    ``zero=True`` gives all-zero parameters, which force an all-zero output
    whatever the input; useful as a fixed point in tests.
    """
    params: dict[str, Tensor] = {}
    for name, cin, cout, k in layer_plan(cfg):
        fan_in = cin * k * k
        if zero:
            w = np.zeros((cout, cin, k, k))
        else:
            w = rng.standard_normal((cout, cin, k, k)) * np.sqrt(2.0 / fan_in)
        params[f"{name}.w"] = Tensor(w.astype(dtype), requires_grad=True)
        params[f"{name}.b"] = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    return params


def _conv_block(x: Tensor, params, name: str) -> Tensor:
    return relu(conv2d(x, params[f"{name}.w"], params[f"{name}.b"]))


def _stack_inputs(burst, sigma, cfg: NetConfig) -> Tensor:
    frames = burst.frames if isinstance(burst, Burst) else burst
    x = as_tensor(frames)
    if x.data.ndim != 3:
        raise ValueError(f"frames must be [n, h, w], got {x.shape}")
    n, h, w = x.shape
    if n != cfg.n_frames:
        raise ValueError(f"config expects {cfg.n_frames} frames, got {n}")
    step = 2**cfg.levels
    if h % step or w % step:
        raise ValueError(
            f"input extent {h}x{w} must be divisible by 2^levels = {step}"
        )
    if cfg.noise_aware:
        if sigma is None:
            raise ValueError("noise-aware model needs a sigma map")
        sig = as_tensor(sigma)
        if sig.shape != (h, w):
            raise ValueError(f"sigma map {sig.shape} does not match frames {h}x{w}")
        x = concat_channels(x, reshape(Tensor(sig.data.astype(x.dtype)), (1, h, w)))
    elif sigma is not None:
        raise ValueError("blind model takes no sigma map")
    return x


def _trunk(x: Tensor, params, cfg: NetConfig) -> Tensor:
    skips = []
    for lvl in range(cfg.levels):
        x = _conv_block(x, params, f"enc{lvl}.conv0")
        x = _conv_block(x, params, f"enc{lvl}.conv1")
        skips.append(x)
        x = avg_pool2(x)
    for lvl in reversed(range(cfg.levels)):
        x = bilinear_upsample2(x)
        x = concat_channels(x, skips[lvl])
        x = _conv_block(x, params, f"dec{lvl}.conv0")
        x = _conv_block(x, params, f"dec{lvl}.conv1")
    return x


def forward(burst, sigma, params, cfg: NetConfig) -> Tensor:
    """Predict a [n, k, k, h, w] kernel stack for the burst."""
    if cfg.head != KERNEL_HEAD:
        raise ValueError(f"forward needs a '{KERNEL_HEAD}' head config, got {cfg.head!r}")
    x = _stack_inputs(burst, sigma, cfg)
    h, w = x.shape[1:]
    x = _trunk(x, params, cfg)
    x = conv2d(x, params["head.conv0.w"], params["head.conv0.b"])
    return reshape(x, (cfg.n_frames, cfg.k, cfg.k, h, w))


def forward_direct(burst, sigma, params, cfg: NetConfig) -> Tensor:
    """Predict the output image directly: [h, w]."""
    if cfg.head != DIRECT_HEAD:
        raise ValueError(f"forward_direct needs a '{DIRECT_HEAD}' head config, got {cfg.head!r}")
    x = _stack_inputs(burst, sigma, cfg)
    h, w = x.shape[1:]
    x = _trunk(x, params, cfg)
    for i in range(3):
        x = _conv_block(x, params, f"head.conv{i}")
    x = conv2d(x, params["head.conv3.w"], params["head.conv3.b"])
    return reshape(x, (h, w))
