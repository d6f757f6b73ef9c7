"""Shared test utilities: finite-difference oracles and procedural images."""

from __future__ import annotations

import numpy as np

from burstkpn.tensor import Tensor


def finite_diff(func, arrays, index, eps=1e-5):
    """Central finite differences of a scalar ``func`` w.r.t. ``arrays[index]``.

    ``func`` receives the list of float64 arrays and returns a python float.
    """
    base = [a.astype(np.float64).copy() for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + eps
        hi = func(base)
        flat[i] = keep - eps
        lo = func(base)
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def check_grads(build, arrays, tol=1e-4, eps=1e-5):
    """Compare autodiff grads of ``build`` against finite differences.

    ``build`` maps a list of Tensors to a scalar Tensor.  Every input array
    is treated as a differentiable leaf (float64).
    """
    leaves = [Tensor(a.astype(np.float64), requires_grad=True) for a in arrays]
    loss = build(leaves)
    loss.backward()

    def scalar(arrs):
        return float(build([Tensor(a) for a in arrs]).data)

    worst = 0.0
    for i, leaf in enumerate(leaves):
        got = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        want = finite_diff(scalar, arrays, i, eps=eps)
        worst = max(worst, rel_err(got, want))
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst


def delta_head_params(cfg, rng):
    """All-zero net whose head bias emits a centered delta for every frame.

    The resulting kernel stack makes the model output the plain burst
    average regardless of input.
    """
    from burstkpn.network import init_params

    params = init_params(cfg, rng, zero=True)
    c = cfg.k // 2
    for i in range(cfg.n_frames):
        params["head.conv0.b"].data[(i * cfg.k + c) * cfg.k + c] = 1.0
    return params


def naive_filter_frames(frames: np.ndarray, kernels: np.ndarray) -> np.ndarray:
    """Independent oracle for the vectorized kernel application.

    Plain per-pixel loops: clamp neighborhood indices to the image (edge
    replication) and accumulate the dot product one tap at a time.
    """
    n, h, w = frames.shape
    k = kernels.shape[1]
    r = k // 2
    out = np.zeros_like(frames, dtype=np.float64)
    for i in range(n):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for u in range(k):
                    for v in range(k):
                        yy = min(max(y + u - r, 0), h - 1)
                        xx = min(max(x + v - r, 0), w - 1)
                        acc += float(kernels[i, u, v, y, x]) * float(frames[i, yy, xx])
                out[i, y, x] = acc
    return out


def clean_source(seed: int, size: int = 256) -> np.ndarray:
    """Deterministic synthetic photograph stand-in, display-space [0,1].

    Smooth background gradient plus random soft-edged rectangles and
    ellipses, so bursts contain both flat regions and edges.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(713,)))
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    a, b, c = rng.uniform(-0.3, 0.3, size=3)
    img = 0.45 + a * xx + b * yy + c * np.sin(2 * np.pi * (xx * rng.uniform(0.5, 2)))
    for _ in range(12):
        cy, cx = rng.uniform(0.1, 0.9, size=2) * size
        ry, rx = rng.uniform(0.03, 0.25, size=2) * size
        level = rng.uniform(-0.5, 0.5)
        if rng.random() < 0.5:
            mask = (np.abs(yy * size - cy) < ry) & (np.abs(xx * size - cx) < rx)
            img += level * mask
        else:
            d = ((yy * size - cy) / ry) ** 2 + ((xx * size - cx) / rx) ** 2
            img += level / (1.0 + np.exp(np.minimum(20.0 * (d - 1.0), 500.0)))
    lo, hi = img.min(), img.max()
    img = 0.03 + 0.94 * (img - lo) / max(hi - lo, 1e-9)
    return img.astype(np.float64)
