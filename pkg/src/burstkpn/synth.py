"""Synthetic misaligned-burst generation from clean display-space images.

Each burst comes from one clean source image: crop a reference patch at
``patch * downsample`` resolution, crop jittered alternate patches (with
occasional large "failure" shifts standing in for alignment errors),
box-downsample everything, undo the display transfer to get linear
intensities, rescale exposure, then inject sensor noise into every frame.
The post-scale pre-noise reference is kept as ground truth.

Offsets are whole pre-downsample pixels, so post-downsample shifts can be
fractional (offset 3 at downsample 4 is 0.75 px); this deliberately
exercises subpixel alignment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gamma import srgb_inverse
from .noise import NoiseParams, NoiseRanges, sample_noise, sample_params

Array = np.ndarray


@dataclass(frozen=True)
class SynthConfig:
    """Burst synthesis settings.

    ``max_shift`` and ``fail_shift`` bound post-downsample translations for
    ordinary and failure frames; ``fail_rate`` is the Poisson rate of the
    per-burst failure count n, each alternate failing with probability
    min(n / n_frames, 1).  ``noise`` is a sampling rectangle, a fixed
    parameter pair, or None for noiseless bursts.
    """

    n_frames: int = 8
    downsample: int = 4
    max_shift: int = 2
    fail_shift: int = 16
    fail_rate: float = 1.5
    scale_range: tuple[float, float] = (0.1, 1.0)
    patch: int = 128
    noise: NoiseRanges | NoiseParams | None = field(default_factory=NoiseRanges)

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.downsample < 1:
            raise ValueError(f"downsample must be >= 1, got {self.downsample}")
        if not (0 <= self.max_shift < self.fail_shift):
            raise ValueError(
                f"need 0 <= max_shift < fail_shift, got {self.max_shift}, {self.fail_shift}"
            )
        if self.fail_rate < 0:
            raise ValueError(f"fail_rate must be >= 0, got {self.fail_rate}")
        lo, hi = self.scale_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})")
        if self.patch < 1:
            raise ValueError(f"patch must be >= 1, got {self.patch}")

    @property
    def source_extent(self) -> int:
        """Minimum source side length: the reference crop plus shift margins."""
        return self.downsample * (self.patch + 2 * self.fail_shift)


def mini_synth_config(**overrides) -> SynthConfig:
    """Small preset for tests and desk-scale training."""
    args = dict(n_frames=4, patch=32)
    args.update(overrides)
    return SynthConfig(**args)


@dataclass
class Burst:
    """One synthetic burst; ``frames[0]`` is the reference.

    ``offsets`` holds per-frame pre-downsample integer shifts (reference is
    (0, 0)) and ``failures`` marks frames drawn from the wide shift range;
    both are synthesis-time diagnostics, not model inputs.
    """

    frames: Array
    params: NoiseParams
    scale: float
    truth: Array | None = None
    offsets: Array | None = None
    failures: Array | None = None

    def __post_init__(self):
        if self.frames.ndim != 3:
            raise ValueError(f"frames must be [n, h, w], got shape {self.frames.shape}")
        if self.truth is not None and self.truth.shape != self.frames.shape[1:]:
            raise ValueError(
                f"truth shape {self.truth.shape} does not match frame shape {self.frames.shape[1:]}"
            )
        if self.offsets is not None and tuple(self.offsets[0]) != (0, 0):
            raise ValueError(f"reference offset must be (0, 0), got {tuple(self.offsets[0])}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def reference(self) -> Array:
        return self.frames[0]


def to_grayscale(img: Array) -> Array:
    """Channel-mean reduction; 2-d images pass through."""
    img = np.asarray(img)
    if img.ndim == 2:
        return img
    if img.ndim == 3:
        return img.mean(axis=-1)
    raise ValueError(f"expected [h, w] or [h, w, c] image, got shape {img.shape}")


def invert_gamma(img: Array) -> Array:
    """Display values in [0, 1] back to linear intensities."""
    img = np.asarray(img)
    if img.size and (img.min() < 0 or img.max() > 1):
        raise ValueError(
            f"display values must lie in [0, 1], got range "
            f"[{img.min():g}, {img.max():g}]"
        )
    return srgb_inverse(img)


def box_downsample(img: Array, factor: int) -> Array:
    """Mean over non-overlapping factor x factor blocks."""
    img = np.asarray(img)
    h, w = img.shape
    if h % factor or w % factor:
        raise ValueError(f"extents {h}x{w} not divisible by downsample factor {factor}")
    return img.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def sample_misalignments(cfg: SynthConfig, rng: np.random.Generator) -> tuple[Array, Array]:
    """Per-frame pre-downsample integer offsets and failure flags.

    One Poisson draw sets the expected failure count; each alternate frame
    first gets a small base offset, then independently becomes a failure
    (wide offset) with probability min(n / n_frames, 1).
    """
    j = cfg.downsample
    n_fail = rng.poisson(cfg.fail_rate)
    p_fail = min(n_fail / cfg.n_frames, 1.0)
    offsets = np.zeros((cfg.n_frames, 2), dtype=np.int64)
    failures = np.zeros(cfg.n_frames, dtype=bool)
    for i in range(1, cfg.n_frames):
        bound = j * cfg.max_shift
        offsets[i] = rng.integers(-bound, bound + 1, size=2)
        if rng.uniform() < p_fail:
            failures[i] = True
            wide = j * cfg.fail_shift
            offsets[i] = rng.integers(-wide, wide + 1, size=2)
    return offsets, failures


def make_burst(source: Array, cfg: SynthConfig, rng: np.random.Generator) -> Burst:
    """Synthesize one burst from a clean display-space source image.

    Draw order is fixed (crop position, misalignments, exposure scale,
    noise parameters, then per-frame noise from spawned child streams), so
    identical (source, cfg, generator state) gives bit-identical bursts.
    """
    source = to_grayscale(np.asarray(source, dtype=np.float64))
    h, w = source.shape
    j = cfg.downsample
    big = cfg.patch * j
    margin = cfg.fail_shift * j
    if h < cfg.source_extent or w < cfg.source_extent:
        raise ValueError(
            f"source {h}x{w} too small: need at least "
            f"{cfg.source_extent}x{cfg.source_extent} for patch {cfg.patch} "
            f"at downsample {cfg.downsample} with shift margin {cfg.fail_shift}"
        )

    y0 = int(rng.integers(margin, h - big - margin + 1))
    x0 = int(rng.integers(margin, w - big - margin + 1))
    offsets, failures = sample_misalignments(cfg, rng)
    scale = float(rng.uniform(*cfg.scale_range))

    if cfg.noise is None:
        params = NoiseParams(0.0, 0.0)
    elif isinstance(cfg.noise, NoiseParams):
        params = cfg.noise
    else:
        params = sample_params(cfg.noise, rng)

    clean = np.empty((cfg.n_frames, cfg.patch, cfg.patch))
    for i, (dy, dx) in enumerate(offsets):
        crop = source[y0 + dy : y0 + dy + big, x0 + dx : x0 + dx + big]
        clean[i] = invert_gamma(box_downsample(crop, j)) * scale

    frames = np.empty_like(clean)
    for i, frame_rng in enumerate(rng.spawn(cfg.n_frames)):
        frames[i] = sample_noise(clean[i], params, frame_rng)

    return Burst(
        frames=frames.astype(np.float32),
        params=params,
        scale=scale,
        truth=clean[0].astype(np.float32),
        offsets=offsets,
        failures=failures,
    )
