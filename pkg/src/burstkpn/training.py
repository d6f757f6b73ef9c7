"""Adam training over synthetic bursts, plus the evaluation harness.

Training is deterministic under the config seed: the burst pool is keyed
by (seed, 1, burst index), per-step batch sampling by (seed, 2, step), so
a run resumed from a checkpoint replays exactly the log an uninterrupted
run would have produced.  Checkpoints carry the optimizer moments next to
the model tensors, making resumes bit-identical.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import gamma
from .formats import load_checkpoint, save_checkpoint
from .kernels import apply, baseline_average, baseline_reference
from .losses import (
    AnnealSchedule,
    LossWeights,
    anneal_weight,
    annealed_loss_terms,
    basic_loss,
)
from .metrics import MetricsRow, psnr, ssim
from .network import DIRECT_HEAD, KERNEL_HEAD, NetConfig, forward, forward_direct, init_params, mini_net_config
from .noise import NoiseParams, estimate_sigma_map, params_at_gain, stream
from .synth import Burst, SynthConfig, make_burst, mini_synth_config
from .tensor import Tensor, zero_grads

Array = np.ndarray

LOSS_COLUMNS = ("step", "total", "basic", "annealed", "weight")
METRICS_COLUMNS = ("method", "gain", "psnr", "ssim")

# rng stream purposes under the training seed
_INIT_STREAM = 0
_POOL_STREAM = 1
_BATCH_STREAM = 2
_EVAL_STREAM = 3


# -- optimizer -----------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t.data) for k, t in params.items()},
            v={k: np.zeros_like(t.data) for k, t in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update from the accumulated gradients."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.data.shape:
            raise ValueError(
                f"optimizer state for {name!r} has shape {m.shape}, parameter is {p.data.shape}"
            )
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        p.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients down to a global L2 norm of max_norm; returns the
    pre-clip norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


# -- configuration -------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch: int = 4
    iters: int = 5000
    seed: int = 0
    pool: int = 64
    clip_norm: float = 10.0
    checkpoint_every: int = 1000
    anneal: AnnealSchedule = AnnealSchedule()
    weights: LossWeights = LossWeights()
    net: NetConfig = mini_net_config()
    synth: SynthConfig = mini_synth_config()

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.pool < 1:
            raise ValueError(f"pool must be >= 1, got {self.pool}")
        if self.net.n_frames != self.synth.n_frames:
            raise ValueError(
                f"net expects {self.net.n_frames} frames but synthesis makes {self.synth.n_frames}"
            )


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    opt: AdamState
    log: list[tuple]
    checkpoints: list[str]


# -- data ----------------------------------------------------------------


def synthesize_pool(
    sources, synth_cfg: SynthConfig, seed: int, count: int, purpose: int = _POOL_STREAM
) -> list[Burst]:
    """Pregenerate bursts keyed by (seed, purpose, index).

    The same keying for on-disk and in-memory pools means a training run
    fed from either sees identical data.
    """
    if not sources:
        raise ValueError("need at least one source image")
    return [
        make_burst(sources[i % len(sources)], synth_cfg, stream(seed, purpose, i))
        for i in range(count)
    ]


def _as_pool(data, cfg: TrainConfig) -> list[Burst]:
    items = list(data)
    if not items:
        raise ValueError("need at least one source image or burst")
    if isinstance(items[0], Burst):
        return items
    return synthesize_pool(items, cfg.synth, cfg.seed, cfg.pool)


# -- inference -----------------------------------------------------------


def sigma_input(burst: Burst, sigma_scale: float = 1.0) -> Array:
    """Per-pixel noise stddev estimate from the reference frame."""
    return estimate_sigma_map(burst.frames[0], burst.params) * sigma_scale


def denoise_burst(
    params: dict[str, Tensor],
    net_cfg: NetConfig,
    burst: Burst,
    sigma_scale: float = 1.0,
) -> tuple[Array, Array | None]:
    """Run the model on one burst; returns (output, kernel stack or None)."""
    sigma = sigma_input(burst, sigma_scale) if net_cfg.noise_aware else None
    if net_cfg.head == KERNEL_HEAD:
        stack = forward(burst.frames, sigma, params, net_cfg)
        _, out = apply(burst.frames, stack)
        return out.data, stack.data
    out = forward_direct(burst.frames, sigma, params, net_cfg)
    return out.data, None


def split_checkpoint(tensors: dict[str, Array]) -> tuple[dict[str, Tensor], AdamState | None]:
    """Separate model parameters from optimizer tensors in a loaded archive."""
    params = {
        k: Tensor(v, requires_grad=True) for k, v in tensors.items() if not k.startswith("opt.")
    }
    if "opt.step" not in tensors:
        return params, None
    opt = AdamState(
        m={k: tensors[f"opt.m.{k}"].copy() for k in params},
        v={k: tensors[f"opt.v.{k}"].copy() for k in params},
        step=int(tensors["opt.step"][0]),
    )
    return params, opt


def _opt_tensors(opt: AdamState) -> dict[str, Array]:
    extra: dict[str, Array] = {}
    for k, arr in opt.m.items():
        extra[f"opt.m.{k}"] = arr
    for k, arr in opt.v.items():
        extra[f"opt.v.{k}"] = arr
    extra["opt.step"] = np.array([float(opt.step)], dtype=np.float32)
    return extra


# -- training loop -------------------------------------------------------


def _item_losses(burst: Burst, params, cfg: TrainConfig, t: int):
    """(total, basic value, per-frame sum value) for one burst at step t."""
    sigma = sigma_input(burst) if cfg.net.noise_aware else None
    truth = Tensor(burst.truth)
    if cfg.net.head == DIRECT_HEAD:
        out = forward_direct(burst.frames, sigma, params, cfg.net)
        base = basic_loss(out, truth, cfg.weights, burst.scale)
        return base, float(base.data), 0.0
    stack = forward(burst.frames, sigma, params, cfg.net)
    per_frame, out = apply(burst.frames, stack)
    total, base, frame_sum, _ = annealed_loss_terms(
        per_frame, out, truth, cfg.anneal.at(t), cfg.weights, burst.scale
    )
    return total, float(base.data), float(frame_sum.data)


def train(cfg: TrainConfig, data, out_dir=None, resume=None, log_every: int = 1) -> TrainResult:
    """Run the optimization; ``data`` is clean source images or Bursts.

    ``resume`` takes a checkpoint path and continues from its recorded
    step, replaying exactly what the uninterrupted run would have done.
    ``log_every`` thins the in-memory/CSV loss log (checkpoint steps and
    the final step always log).
    """
    pool = _as_pool(data, cfg)
    for burst in pool:
        if burst.truth is None:
            raise ValueError("training bursts need ground truth")

    start = 0
    if resume is not None:
        tensors, net_cfg, start = load_checkpoint(resume)
        if net_cfg != cfg.net:
            raise ValueError(
                f"checkpoint net config {net_cfg} does not match training config {cfg.net}"
            )
        params, opt = split_checkpoint(tensors)
        if opt is None:
            opt = AdamState.for_params(params)
    else:
        params = init_params(cfg.net, stream(cfg.seed, _INIT_STREAM))
        opt = AdamState.for_params(params)

    if start >= cfg.iters:
        raise ValueError(f"checkpoint is already at step {start} of {cfg.iters}")

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "loss.csv") if out_dir is not None else None
    if log_path is not None and not (resume is not None and os.path.exists(log_path)):
        with open(log_path, "w", newline="") as f:
            csv.writer(f).writerow(LOSS_COLUMNS)

    log: list[tuple] = []
    checkpoints: list[str] = []
    for t in range(start, cfg.iters):
        batch_rng = stream(cfg.seed, _BATCH_STREAM, t)
        indices = batch_rng.integers(0, len(pool), size=cfg.batch)
        zero_grads(params.values())
        total = None
        base_sum = 0.0
        frame_sum = 0.0
        for idx in indices:
            item_total, item_base, item_frames = _item_losses(pool[idx], params, cfg, t)
            total = item_total if total is None else total + item_total
            base_sum += item_base
            frame_sum += item_frames
        total = total * (1.0 / cfg.batch)
        total.backward()
        clip_grad_norm(params, cfg.clip_norm)
        adam_step(params, opt, cfg.lr)

        done = t + 1
        at_checkpoint = done % cfg.checkpoint_every == 0 or done == cfg.iters
        if t % log_every == 0 or at_checkpoint:
            row = (
                t,
                float(total.data),
                base_sum / cfg.batch,
                frame_sum / cfg.batch,
                anneal_weight(cfg.anneal.at(t)),
            )
            log.append(row)
            if log_path is not None:
                with open(log_path, "a", newline="") as f:
                    csv.writer(f).writerow([repr(x) if isinstance(x, float) else x for x in row])
        if out_dir is not None and at_checkpoint:
            path = os.path.join(out_dir, f"checkpoint-{done:07d}.kpnc")
            save_checkpoint(path, params, cfg.net, step=done, extra=_opt_tensors(opt))
            checkpoints.append(path)

    return TrainResult(params=params, opt=opt, log=log, checkpoints=checkpoints)


# -- evaluation ----------------------------------------------------------


def display(img: Array, scale: float = 1.0) -> Array:
    """White-level restore then sRGB: the domain both metrics score in."""
    return gamma.srgb(np.asarray(img, dtype=np.float64) / scale)


def evaluate_bursts(
    params: dict[str, Tensor] | None,
    net_cfg: NetConfig | None,
    bursts: list[Burst],
    gain_label: str = "",
    sigma_scale: float = 1.0,
) -> list[MetricsRow]:
    """Score reference, average and (when a model is given) its output."""
    if not bursts:
        raise ValueError("need at least one burst to evaluate")
    for b in bursts:
        if b.truth is None:
            raise ValueError("evaluation bursts need ground truth")
    methods: dict[str, list[tuple[float, float]]] = {}

    def score(name: str, out: Array, burst: Burst):
        ref = display(burst.truth, burst.scale)
        img = display(out, burst.scale)
        methods.setdefault(name, []).append((psnr(img, ref), ssim(img, ref)))

    for burst in bursts:
        score("reference", baseline_reference(burst), burst)
        score("average", baseline_average(burst), burst)
        if params is not None:
            if net_cfg is None:
                raise ValueError("model output requested without a net config")
            out, _ = denoise_burst(params, net_cfg, burst, sigma_scale)
            score("kpn" if net_cfg.head == KERNEL_HEAD else "direct", out, burst)

    return [
        MetricsRow(
            method=name,
            gain=gain_label,
            psnr=float(np.mean([p for p, _ in vals])),
            ssim=float(np.mean([s for _, s in vals])),
        )
        for name, vals in methods.items()
    ]


def evaluate_gains(
    params,
    net_cfg,
    sources,
    synth_cfg: SynthConfig,
    gains=(1.0, 2.0, 4.0, 8.0),
    seed: int = 0,
    count: int = 16,
    sigma_scale: float = 1.0,
) -> list[MetricsRow]:
    """Metrics table across gain levels on freshly synthesized test bursts."""
    rows: list[MetricsRow] = []
    for gi, gain in enumerate(gains):
        cfg_g = replace(synth_cfg, noise=params_at_gain(gain))
        bursts = [
            make_burst(sources[i % len(sources)], cfg_g, stream(seed, _EVAL_STREAM, gi, i))
            for i in range(count)
        ]
        label = f"{gain:g}"
        rows.extend(evaluate_bursts(params, net_cfg, bursts, label, sigma_scale))
    return rows


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_COLUMNS)
        for r in rows:
            writer.writerow([r.method, r.gain, repr(r.psnr), repr(r.ssim)])


def read_loss_log(path) -> list[tuple]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        if tuple(header) != LOSS_COLUMNS:
            raise ValueError(f"unexpected loss log columns {header}")
        return [
            (int(step), float(total), float(basic), float(annealed), float(weight))
            for step, total, basic, annealed, weight in reader
        ]
