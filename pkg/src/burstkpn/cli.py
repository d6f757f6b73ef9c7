"""Command-line interface: synthesize, train, denoise, eval, inspect.

Configuration is one JSON object of flat dotted keys layered over a preset
("mini" or "full").  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import gamma
from .formats import load_burst, load_checkpoint, read_pgm, save_burst, write_pgm
from .kernels import frame_weight_map, mean_kernels
from .losses import AnnealSchedule, LossWeights
from .network import KERNEL_HEAD, full_net_config, mini_net_config
from .noise import NoiseParams, NoiseRanges
from .synth import SynthConfig, mini_synth_config
from .training import (
    TrainConfig,
    denoise_burst,
    evaluate_bursts,
    evaluate_gains,
    split_checkpoint,
    synthesize_pool,
    train,
    write_metrics_csv,
)

_NET_KEYS = ("levels", "widths", "k", "n_frames", "noise_aware", "head")
_SYNTH_KEYS = (
    "n_frames",
    "downsample",
    "max_shift",
    "fail_shift",
    "fail_rate",
    "scale_range",
    "patch",
)
_TRAIN_KEYS = ("lr", "batch", "iters", "seed", "pool", "clip_norm", "checkpoint_every")
_ANNEAL_KEYS = ("beta", "alpha")
_LOSS_KEYS = ("lambda2", "lambda1")
_TUPLE_KEYS = {"net.widths", "synth.scale_range"}


def _read_config_doc(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        doc = json.load(f)
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object of dotted keys")
    return doc


def _pop_section(doc: dict, prefix: str, allowed) -> dict:
    out = {}
    for key in list(doc):
        if not key.startswith(prefix + "."):
            continue
        name = key[len(prefix) + 1 :]
        if name not in allowed:
            raise ValueError(f"unknown config key '{key}'")
        value = doc.pop(key)
        if key in _TUPLE_KEYS and isinstance(value, list):
            value = tuple(value)
        out[name] = value
    return out


def _pop_noise(doc: dict):
    """Noise config: null disables it, a pair of scalars fixes it, a pair
    of [lo, hi] lists samples log-uniformly.  Returns (found, value)."""
    marker = "synth.noise" in doc
    fixed = doc.pop("synth.noise", None)
    sigma_r = doc.pop("synth.noise.sigma_r", None)
    sigma_s = doc.pop("synth.noise.sigma_s", None)
    if marker:
        if fixed is not None:
            raise ValueError("'synth.noise' only accepts null (no noise)")
        if sigma_r is not None or sigma_s is not None:
            raise ValueError("'synth.noise' conflicts with synth.noise.sigma_*")
        return True, None
    if sigma_r is None and sigma_s is None:
        return False, None
    if sigma_r is None or sigma_s is None:
        raise ValueError("set both synth.noise.sigma_r and synth.noise.sigma_s")
    if isinstance(sigma_r, list) != isinstance(sigma_s, list):
        raise ValueError("synth.noise.sigma_* must both be scalars or both [lo, hi]")
    if isinstance(sigma_r, list):
        if len(sigma_r) != 2 or len(sigma_s) != 2:
            raise ValueError("synth.noise.sigma_* ranges must be [lo, hi]")
        return True, NoiseRanges(
            sigma_s_min=sigma_s[0],
            sigma_s_max=sigma_s[1],
            sigma_r_min=sigma_r[0],
            sigma_r_max=sigma_r[1],
        )
    return True, NoiseParams(sigma_r=sigma_r, sigma_s=sigma_s)


def config_from_doc(doc: dict) -> TrainConfig:
    """Build the full training configuration from flat dotted keys."""
    doc = dict(doc)
    preset = doc.pop("preset", "mini")
    if preset not in ("mini", "full"):
        raise ValueError(f"unknown preset '{preset}' (expected 'mini' or 'full')")

    has_noise, noise = _pop_noise(doc)
    net_over = _pop_section(doc, "net", _NET_KEYS)
    synth_over = _pop_section(doc, "synth", _SYNTH_KEYS)
    train_over = _pop_section(doc, "train", _TRAIN_KEYS)
    anneal_over = _pop_section(doc, "anneal", _ANNEAL_KEYS)
    loss_over = _pop_section(doc, "loss", _LOSS_KEYS)
    if doc:
        raise ValueError(f"unknown config key '{sorted(doc)[0]}'")
    if has_noise:
        synth_over["noise"] = noise

    if preset == "mini":
        net = mini_net_config(**net_over)
        synth = mini_synth_config(**synth_over)
    else:
        net = full_net_config(**net_over)
        synth = SynthConfig(**synth_over)
    return TrainConfig(
        net=net,
        synth=synth,
        anneal=AnnealSchedule(**anneal_over),
        weights=LossWeights(**loss_over),
        **train_over,
    )


def load_config(path) -> TrainConfig:
    return config_from_doc(_read_config_doc(path))


# -- data loading ----------------------------------------------------------


def _files_with_suffix(directory, suffix):
    names = sorted(os.listdir(directory))
    return [os.path.join(directory, n) for n in names if n.endswith(suffix)]


def _load_sources(directory):
    paths = _files_with_suffix(directory, ".pgm")
    if not paths:
        raise ValueError(f"no .pgm source images in {directory}")
    return [read_pgm(p) for p in paths]


def _load_data(directory):
    """A directory of bursts (.kpnb) or of clean sources (.pgm)."""
    bursts = _files_with_suffix(directory, ".kpnb")
    if bursts:
        return [load_burst(p) for p in bursts]
    sources = _files_with_suffix(directory, ".pgm")
    if sources:
        return [read_pgm(p) for p in sources]
    raise ValueError(f"no .kpnb bursts or .pgm sources in {directory}")


def _load_model(path):
    tensors, net_cfg, step = load_checkpoint(path)
    params, _ = split_checkpoint(tensors)
    return params, net_cfg, step


# -- subcommands -----------------------------------------------------------


def cmd_synthesize(args) -> int:
    cfg = load_config(args.config)
    sources = _load_sources(args.input_dir)
    bursts = synthesize_pool(sources, cfg.synth, args.seed, args.count)
    os.makedirs(args.out, exist_ok=True)
    for i, burst in enumerate(bursts):
        save_burst(os.path.join(args.out, f"burst-{i:05d}.kpnb"), burst)
    print(f"wrote {len(bursts)} bursts to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    data = _load_data(args.data)
    result = train(cfg, data, out_dir=args.out, resume=args.resume)
    step, total = result.log[-1][0], result.log[-1][1]
    print(f"finished at step {step} with loss {total!r}; outputs in {args.out}")
    return 0


def cmd_denoise(args) -> int:
    burst = load_burst(args.burst)
    params, net_cfg, _ = _load_model(args.checkpoint)
    out, _ = denoise_burst(params, net_cfg, burst, sigma_scale=args.sigma_scale)
    img = out / burst.scale
    if not args.linear:
        img = gamma.srgb(img)
    write_pgm(args.out, np.clip(img, 0.0, 1.0), bits=16)
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args) -> int:
    params = net_cfg = None
    if args.checkpoint is not None:
        params, net_cfg, _ = _load_model(args.checkpoint)
    data = _load_data(args.data)
    if data and hasattr(data[0], "frames"):
        rows = evaluate_bursts(params, net_cfg, data, "-", args.sigma_scale)
    else:
        gains = tuple(float(tok) for tok in args.gains.split(","))
        cfg = load_config(args.config)
        rows = evaluate_gains(
            params,
            net_cfg,
            data,
            cfg.synth,
            gains=gains,
            seed=args.seed,
            count=args.count,
            sigma_scale=args.sigma_scale,
        )
    write_metrics_csv(args.report, rows)
    print(f"{'method':<10} {'gain':>5} {'psnr':>8} {'ssim':>7}")
    for r in rows:
        print(f"{r.method:<10} {r.gain:>5} {r.psnr:>8.3f} {r.ssim:>7.4f}")
    print(f"wrote {args.report}")
    return 0


def cmd_inspect(args) -> int:
    burst = load_burst(args.burst)
    params, net_cfg, _ = _load_model(args.checkpoint)
    if net_cfg.head != KERNEL_HEAD:
        raise ValueError("direct-synthesis checkpoints have no kernels to inspect")
    _, stack = denoise_burst(params, net_cfg, burst, sigma_scale=args.sigma_scale)
    os.makedirs(args.out_dir, exist_ok=True)

    weights = frame_weight_map(stack)
    means = mean_kernels(stack)
    for i in range(weights.shape[0]):
        peak = float(weights[i].max())
        img = weights[i] / peak if peak > 0 else weights[i]
        name = f"weight-map-{i:02d}.pgm"
        write_pgm(os.path.join(args.out_dir, name), img, bits=8)
        print(f"wrote {name} (peak {peak!r})")

        absmax = float(np.abs(means[i]).max())
        img = 0.5 + means[i] / (2 * absmax) if absmax > 0 else np.full_like(means[i], 0.5)
        name = f"mean-kernel-{i:02d}.pgm"
        write_pgm(os.path.join(args.out_dir, name), img, bits=8)
        print(f"wrote {name} (absmax {absmax!r}, zero at mid-gray)")
    return 0


# -- argument parsing ------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstkpn",
        description="Burst denoising with per-pixel predicted kernels.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "synthesize",
        help="generate misaligned noisy bursts from clean images",
        description="Reads .pgm grayscale sources and writes .kpnb burst "
        "containers (one per --count, named burst-NNNNN.kpnb).",
    )
    p.add_argument("--input-dir", required=True, help="directory of .pgm sources")
    p.add_argument("--out", required=True, help="output directory for bursts")
    p.add_argument("--count", type=int, default=16, help="number of bursts")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.add_argument("--config", help="JSON config (synth.* keys)")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser(
        "train",
        help="train a model",
        description="Trains on a directory of .kpnb bursts or .pgm sources "
        "(sources are synthesized into a pool).  Writes checkpoints and "
        "loss.csv with columns step,total,basic,annealed,weight.",
    )
    p.add_argument("--data", required=True, help="directory of .kpnb or .pgm files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "denoise",
        help="denoise one burst",
        description="Writes a 16-bit PGM, display-mapped (gamma after white "
        "level restore) unless --linear is given.",
    )
    p.add_argument("--burst", required=True, help=".kpnb burst file")
    p.add_argument("--checkpoint", required=True, help=".kpnc checkpoint")
    p.add_argument("--out", required=True, help="output .pgm path")
    p.add_argument("--sigma-scale", type=float, default=1.0, help="noise map multiplier")
    p.add_argument("--linear", action="store_true", help="skip the gamma mapping")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser(
        "eval",
        help="score model and baselines",
        description="On .pgm sources, synthesizes test bursts per gain; on "
        ".kpnb bursts, scores them directly (--gains unused).  Report CSV "
        "columns: method,gain,psnr,ssim.",
    )
    p.add_argument("--data", required=True, help="directory of .pgm or .kpnb files")
    p.add_argument("--checkpoint", help=".kpnc checkpoint (omit for baselines only)")
    p.add_argument("--gains", default="1,2,4,8", help="comma-separated gain levels")
    p.add_argument("--report", required=True, help="output CSV path")
    p.add_argument("--config", help="JSON config (synth.* keys)")
    p.add_argument("--seed", type=int, default=0, help="test synthesis seed")
    p.add_argument("--count", type=int, default=16, help="bursts per gain")
    p.add_argument("--sigma-scale", type=float, default=1.0, help="noise map multiplier")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser(
        "inspect",
        help="visualize predicted kernels on one burst",
        description="Writes, per frame, the kernel weight map and the "
        "spatially averaged kernel as 8-bit PGMs, each normalized "
        "independently (the factor is printed).",
    )
    p.add_argument("--burst", required=True, help=".kpnb burst file")
    p.add_argument("--checkpoint", required=True, help=".kpnc checkpoint")
    p.add_argument("--out-dir", required=True, help="output directory")
    p.add_argument("--sigma-scale", type=float, default=1.0, help="noise map multiplier")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
