"""Signal-dependent Gaussian sensor noise model.

A raw measurement x at a pixel with true intensity y is modeled as
``x ~ N(y, sigma_r^2 + sigma_s * y)``: read noise is signal-independent,
shot noise variance grows linearly with intensity.  The module also covers
the gain-to-parameter conversion, per-pixel sigma estimation, scalar burst
noise summaries and the 2x2 quad-averaging used to reduce mosaicked raw
frames to grayscale.

All sampling takes an explicit ``numpy.random.Generator``; see ``stream``
for the counter-based construction that keys a generator to a (seed, id...)
path so draws are reproducible independently of iteration order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Array = np.ndarray


def stream(seed: int, *path: int) -> np.random.Generator:
    """Philox generator keyed by (seed, path); order-independent."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=path))
    )


@dataclass(frozen=True)
class NoiseParams:
    """Per-burst read/shot noise levels in linear [0,1] intensity units."""

    sigma_r: float
    sigma_s: float

    def __post_init__(self):
        if self.sigma_r < 0 or self.sigma_s < 0:
            raise ValueError(
                f"noise parameters must be non-negative, got "
                f"sigma_r={self.sigma_r}, sigma_s={self.sigma_s}"
            )


@dataclass(frozen=True)
class GainSetting:
    """Camera gain chain: analog gain, digital gain, readout stddev (e-)."""

    g_a: float
    g_d: float
    r: float

    def __post_init__(self):
        if self.g_a <= 0 or self.g_d <= 0:
            raise ValueError(f"gains must be positive, got g_a={self.g_a}, g_d={self.g_d}")
        if self.r < 0:
            raise ValueError(f"readout stddev must be non-negative, got r={self.r}")


@dataclass(frozen=True)
class NoiseRanges:
    """Log-uniform sampling rectangle for (sigma_s, sigma_r).

    Defaults span roughly two decades each, keeping SNR in a trainable
    range.  Degenerate [a, a] ranges return a exactly.
    """

    sigma_s_min: float = 1e-4
    sigma_s_max: float = 1e-2
    sigma_r_min: float = 1e-3
    sigma_r_max: float = 3e-2

    def __post_init__(self):
        for lo, hi, name in (
            (self.sigma_s_min, self.sigma_s_max, "sigma_s"),
            (self.sigma_r_min, self.sigma_r_max, "sigma_r"),
        ):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} range must satisfy 0 < min <= max, got [{lo}, {hi}]")


# evaluation gain anchors; gain g scales both parameters linearly
DEFAULT_GAIN_ANCHORS = (1e-3, 3e-3)  # (sigma_s0, sigma_r0)


def sample_noise(clean: Array, params: NoiseParams, rng: np.random.Generator) -> Array:
    """Draw one noisy realization of ``clean`` under the sensor model.

    Outputs are not clipped: read noise routinely produces negative values
    on dark pixels, matching black-level-subtracted raw data.
    """
    clean = np.asarray(clean)
    if clean.size and clean.min() < 0:
        raise ValueError(
            f"clean intensities must be non-negative (variance would be "
            f"undefined), min was {clean.min():g}"
        )
    var = params.sigma_r**2 + params.sigma_s * clean
    noise = rng.standard_normal(clean.shape) * np.sqrt(var)
    return (clean + noise).astype(clean.dtype, copy=False)


def estimate_sigma_map(reference: Array, params: NoiseParams) -> Array:
    """Per-pixel noise stddev estimate from an observed reference frame.

    Substitutes the observed intensity for the unknown true one, clamping
    negatives so the estimate never falls below sigma_r.
    """
    reference = np.asarray(reference)
    return np.sqrt(params.sigma_r**2 + params.sigma_s * np.maximum(reference, 0.0))


def params_from_gains(g: GainSetting) -> NoiseParams:
    """Noise parameters implied by a gain chain applied to photon counts."""
    return NoiseParams(sigma_r=g.g_d * g.r, sigma_s=g.g_d * g.g_a)


def params_at_gain(gain: float, anchors: tuple[float, float] = DEFAULT_GAIN_ANCHORS) -> NoiseParams:
    """Evaluation noise level: both parameters scale linearly with gain."""
    if gain <= 0:
        raise ValueError(f"gain must be positive, got {gain}")
    s0, r0 = anchors
    return NoiseParams(sigma_r=gain * r0, sigma_s=gain * s0)


def sample_params(ranges: NoiseRanges, rng: np.random.Generator) -> NoiseParams:
    """Draw (sigma_s, sigma_r) log-uniformly from the configured rectangle."""

    def draw(lo: float, hi: float) -> float:
        if lo == hi:
            return lo
        return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

    sigma_s = draw(ranges.sigma_s_min, ranges.sigma_s_max)
    sigma_r = draw(ranges.sigma_r_min, ranges.sigma_r_max)
    return NoiseParams(sigma_r=sigma_r, sigma_s=sigma_s)


def sigma_rms(sigma_map: Array, normalized: bool = False) -> float:
    """Scalar noise summary: root of the summed squared per-pixel sigmas.

    The plain sum grows with image area; ``normalized=True`` averages
    inside the root instead (a true RMS).
    """
    sigma_map = np.asarray(sigma_map)
    if sigma_map.size == 0:
        raise ValueError("sigma_rms of an empty map")
    total = float(np.sum(np.square(sigma_map, dtype=np.float64)))
    if normalized:
        total /= sigma_map.size
    return math.sqrt(total)


def bayer_to_gray(raw: Array, params: NoiseParams) -> tuple[Array, NoiseParams]:
    """Average each 2x2 quad to one gray pixel and update the noise model.

    The mean of four independent draws has variance
    ``(sigma_r^2 + sigma_s*y) / 4 = (sigma_r/2)^2 + (sigma_s/4)*y``.
    """
    raw = np.asarray(raw)
    h, w = raw.shape
    if h % 2 or w % 2:
        raise ValueError(f"quad averaging needs even extents, got {h}x{w}")
    gray = raw.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return gray, NoiseParams(sigma_r=params.sigma_r / 2.0, sigma_s=params.sigma_s / 4.0)
