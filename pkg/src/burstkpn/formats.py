"""Binary file formats: PGM images, burst containers, checkpoint archives.

Everything multi-byte is little-endian except the 16-bit PGM raster, which
is big-endian per that format's convention.  All load functions reject
truncated or malformed files deterministically, naming the byte offset of
the problem.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .network import NetConfig
from .noise import NoiseParams
from .synth import Burst
from .tensor import Tensor

Array = np.ndarray

BURST_MAGIC = b"KPNB"
CHECKPOINT_MAGIC = b"KPNC"
FORMAT_VERSION = 1

# magic, version, n_frames, h, w, flags, sigma_r, sigma_s, scale
_BURST_HEADER = struct.Struct("<4sIHIIHfff")
_FLAG_TRUTH = 1 << 0
_FLAG_SCALE = 1 << 1


# -- PGM ----------------------------------------------------------------


def write_pgm(path, img: Array, bits: int = 16) -> None:
    """Store a [0, 1] grayscale image as binary PGM (8- or 16-bit)."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError(f"pgm image must be 2-d, got shape {img.shape}")
    if bits not in (8, 16):
        raise ValueError(f"pgm depth must be 8 or 16 bits, got {bits}")
    maxval = (1 << bits) - 1
    q = np.clip(np.rint(img * maxval), 0, maxval)
    raster = q.astype(">u2" if bits == 16 else "u1").tobytes()
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(raster)


def read_pgm(path) -> Array:
    """Load a binary PGM, normalized to [0, 1] float64."""
    with open(path, "rb") as f:
        buf = f.read()

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(buf):
            if buf[pos : pos + 1].isspace():
                pos += 1
            elif buf[pos : pos + 1] == b"#":
                while pos < len(buf) and buf[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise ValueError(f"pgm header truncated at byte {start}")
        return buf[start:pos]

    if token() != b"P5":
        raise ValueError("not a binary pgm file: expected magic P5 at byte 0")
    try:
        w, h, maxval = int(token()), int(token()), int(token())
    except ValueError as e:
        raise ValueError(f"pgm header malformed near byte {pos}: {e}") from None
    if not (0 < maxval < 65536):
        raise ValueError(f"pgm maxval {maxval} out of range")
    pos += 1  # single whitespace after maxval
    dtype = ">u2" if maxval > 255 else "u1"
    need = h * w * (2 if maxval > 255 else 1)
    raster = buf[pos : pos + need]
    if len(raster) != need:
        raise ValueError(
            f"pgm raster truncated at byte {pos + len(raster)}: "
            f"expected {need} bytes from byte {pos}"
        )
    img = np.frombuffer(raster, dtype=dtype).reshape(h, w)
    return img.astype(np.float64) / maxval


# -- burst container ----------------------------------------------------


def save_burst(path, burst: Burst) -> None:
    """Write frames (and truth when present) as little-endian float32 planes."""
    n, h, w = burst.frames.shape
    flags = _FLAG_SCALE | (_FLAG_TRUTH if burst.truth is not None else 0)
    header = _BURST_HEADER.pack(
        BURST_MAGIC,
        FORMAT_VERSION,
        n,
        h,
        w,
        flags,
        np.float32(burst.params.sigma_r),
        np.float32(burst.params.sigma_s),
        np.float32(burst.scale),
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(burst.frames, dtype="<f4").tobytes())
        if burst.truth is not None:
            f.write(np.ascontiguousarray(burst.truth, dtype="<f4").tobytes())


def load_burst(path) -> Burst:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < _BURST_HEADER.size:
        raise ValueError(
            f"burst container truncated at byte {len(buf)}: "
            f"header needs {_BURST_HEADER.size} bytes"
        )
    magic, version, n, h, w, flags, sigma_r, sigma_s, scale = _BURST_HEADER.unpack_from(buf)
    if magic != BURST_MAGIC:
        raise ValueError(f"bad burst container magic {magic!r} at byte 0")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported burst container version {version} at byte 4")
    plane = 4 * h * w
    pos = _BURST_HEADER.size
    need = n * plane + (plane if flags & _FLAG_TRUTH else 0)
    if len(buf) - pos < need:
        raise ValueError(
            f"burst container truncated at byte {len(buf)}: "
            f"expected {need} plane bytes from byte {pos}"
        )
    frames = np.frombuffer(buf, dtype="<f4", count=n * h * w, offset=pos).reshape(n, h, w)
    pos += n * plane
    truth = None
    if flags & _FLAG_TRUTH:
        truth = np.frombuffer(buf, dtype="<f4", count=h * w, offset=pos).reshape(h, w)
    return Burst(
        frames=frames.copy(),
        params=NoiseParams(sigma_r=float(sigma_r), sigma_s=float(sigma_s)),
        scale=float(scale) if flags & _FLAG_SCALE else 1.0,
        truth=truth.copy() if truth is not None else None,
    )


# -- checkpoint archive -------------------------------------------------


def _config_bytes(cfg: NetConfig, step: int) -> bytes:
    doc = asdict(cfg)
    doc["widths"] = list(doc["widths"])
    doc["step"] = step
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _config_from_bytes(raw: bytes, offset: int) -> tuple[NetConfig, int]:
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValueError(f"checkpoint config block malformed at byte {offset}: {e}") from None
    step = doc.pop("step", 0)
    doc["widths"] = tuple(doc["widths"])
    try:
        return NetConfig(**doc), int(step)
    except (TypeError, ValueError) as e:
        raise ValueError(f"checkpoint config block invalid at byte {offset}: {e}") from None


def save_checkpoint(path, params: dict[str, Tensor], cfg: NetConfig, step: int = 0, extra: dict[str, Array] | None = None) -> None:
    """Write named float32 tensors plus the net config (and extras, e.g.
    optimizer moments) in a deterministic order."""
    tensors: list[tuple[str, Array]] = [(k, t.data) for k, t in params.items()]
    for k, arr in (extra or {}).items():
        tensors.append((k, np.asarray(arr)))
    names = [k for k, _ in tensors]
    if len(set(names)) != len(names):
        raise ValueError("checkpoint tensor names must be unique")
    config = _config_bytes(cfg, step)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sI", CHECKPOINT_MAGIC, FORMAT_VERSION))
        f.write(struct.pack("<I", len(config)))
        f.write(config)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[dict[str, Array], NetConfig, int]:
    """Read back (tensors, net config, step); tensors keep archive order."""
    with open(path, "rb") as f:
        buf = f.read()
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if len(buf) - pos < n:
            raise ValueError(
                f"checkpoint truncated at byte {len(buf)}: needed {n} bytes for {what} at byte {pos}"
            )
        out = buf[pos : pos + n]
        pos += n
        return out

    magic, version = struct.unpack("<4sI", take(8, "header"))
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r} at byte 0")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version} at byte 4")
    (config_len,) = struct.unpack("<I", take(4, "config length"))
    config_at = pos
    cfg, step = _config_from_bytes(take(config_len, "config block"), config_at)
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    tensors: dict[str, Array] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"tensor {i} name length"))
        name = take(name_len, f"tensor {i} name").decode("utf-8")
        if name in tensors:
            raise ValueError(f"duplicate tensor name {name!r} at byte {pos - name_len}")
        (ndim,) = struct.unpack("<I", take(4, f"tensor {name!r} ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, f"tensor {name!r} dims"))
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = take(4 * size, f"tensor {name!r} data")
        tensors[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    if pos != len(buf):
        raise ValueError(f"checkpoint has {len(buf) - pos} trailing bytes at byte {pos}")
    return tensors, cfg, step
