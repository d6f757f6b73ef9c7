"""Burst denoising with per-pixel predicted kernel stacks.

A compact, numpy-only pipeline: a reverse-mode autodiff tensor core, a
signal-dependent sensor noise model, synthetic misaligned burst data, a
U-shaped kernel prediction network, an annealed gamma-domain loss, Adam
training with binary checkpoints, and PSNR/SSIM evaluation — all wired
into a CLI and a scikit-learn style estimator.
"""

from .estimator import BurstDenoiser
from .formats import (
    load_burst,
    load_checkpoint,
    read_pgm,
    save_burst,
    save_checkpoint,
    write_pgm,
)
from .kernels import apply, filter_frames, frame_weight_map, mean_kernels
from .losses import AnnealSchedule, LossWeights, annealed_loss, basic_loss
from .metrics import psnr, ssim
from .network import (
    NetConfig,
    forward,
    forward_direct,
    full_net_config,
    init_params,
    mini_net_config,
)
from .noise import (
    GainSetting,
    NoiseParams,
    NoiseRanges,
    estimate_sigma_map,
    sample_noise,
    sample_params,
    stream,
)
from .synth import Burst, SynthConfig, make_burst, mini_synth_config
from .tensor import Tensor
from .training import (
    TrainConfig,
    TrainResult,
    denoise_burst,
    evaluate_bursts,
    evaluate_gains,
    synthesize_pool,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "Burst",
    "BurstDenoiser",
    "GainSetting",
    "LossWeights",
    "NetConfig",
    "NoiseParams",
    "NoiseRanges",
    "SynthConfig",
    "Tensor",
    "TrainConfig",
    "TrainResult",
    "annealed_loss",
    "apply",
    "basic_loss",
    "denoise_burst",
    "estimate_sigma_map",
    "evaluate_bursts",
    "evaluate_gains",
    "filter_frames",
    "forward",
    "forward_direct",
    "frame_weight_map",
    "full_net_config",
    "init_params",
    "load_burst",
    "load_checkpoint",
    "make_burst",
    "mean_kernels",
    "mini_net_config",
    "mini_synth_config",
    "psnr",
    "read_pgm",
    "sample_noise",
    "sample_params",
    "save_burst",
    "save_checkpoint",
    "ssim",
    "stream",
    "synthesize_pool",
    "train",
    "write_pgm",
]
