"""Video ingest and spatiotemporal patch extraction.

A video is a float array of shape ``(T, H, W, 3)`` with values in ``[0, 1]``.
Two on-disk formats are understood: YUV4MPEG2 (8-bit 4:2:0 / 4:4:4) and raw
planar float32 little-endian with a JSON sidecar.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PATCH_SHAPE = (4, 16, 16)

Y4M_MAGIC = b"YUV4MPEG2"
FRAME_TAG = b"FRAME"
_CHROMA_420 = {"420", "420jpeg", "420paldv", "420mpeg2"}


class VideoFormatError(ValueError):
    """Unsupported container parameters (colorspace, bit depth, ...)."""


class CorruptVideoError(ValueError):
    """File contents disagree with the header or sidecar."""


def check_video(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if v.ndim != 4 or v.shape[-1] != 3 or min(v.shape[:3]) < 1:
        raise ValueError(f"expected a (T, H, W, 3) video, got shape {v.shape}")
    return v


# --------------------------------------------------------------------------
# Y4M


def _parse_y4m_header(line: bytes) -> dict:
    fields = line.split()
    if not fields or fields[0] != Y4M_MAGIC:
        raise VideoFormatError("missing YUV4MPEG2 signature")
    hdr = {"C": "420jpeg", "XCOLORRANGE": "FULL"}
    for tok in fields[1:]:
        tok = tok.decode("ascii", errors="replace")
        key, val = tok[0], tok[1:]
        if key == "X":
            if "=" in val:
                k, _, x = val.partition("=")
                hdr["X" + k] = x.upper()
            continue
        hdr[key] = val
    if "W" not in hdr or "H" not in hdr:
        raise CorruptVideoError("Y4M header lacks W/H")
    hdr["W"] = int(hdr["W"])
    hdr["H"] = int(hdr["H"])
    return hdr


def yuv_to_rgb(y, u, v, full_range=True):
    """BT.601 YCbCr (8-bit code values) to RGB in [0, 1]."""
    y = y.astype(np.float64)
    cb = u.astype(np.float64) - 128.0
    cr = v.astype(np.float64) - 128.0
    if full_range:
        yy = y
    else:
        yy = (y - 16.0) * (255.0 / 219.0)
        cb = cb * (255.0 / 224.0)
        cr = cr * (255.0 / 224.0)
    r = yy + 1.402 * cr
    g = yy - 0.344136 * cb - 0.714136 * cr
    b = yy + 1.772 * cb
    return np.clip(np.stack([r, g, b], axis=-1) / 255.0, 0.0, 1.0)


def rgb_to_yuv(rgb):
    """Inverse of :func:`yuv_to_rgb` (full range), rounded to 8-bit codes."""
    rgb = np.asarray(rgb, dtype=np.float64) * 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    u = 128.0 + (b - y) / 1.772
    v = 128.0 + (r - y) / 1.402
    return [np.clip(np.rint(c), 0, 255).astype(np.uint8) for c in (y, u, v)]


def read_y4m(path) -> np.ndarray:
    data = Path(path).read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise CorruptVideoError("truncated Y4M header")
    hdr = _parse_y4m_header(data[:nl])
    cs = hdr["C"]
    if cs in _CHROMA_420:
        sub = 2
    elif cs == "444":
        sub = 1
    else:
        raise VideoFormatError(f"unsupported Y4M colorspace C{cs}")
    W, H = hdr["W"], hdr["H"]
    cw, ch = -(-W // sub), -(-H // sub)
    frame_bytes = W * H + 2 * cw * ch
    full = hdr["XCOLORRANGE"] != "LIMITED"

    frames = []
    pos = nl + 1
    while pos < len(data):
        end = data.find(b"\n", pos)
        if end < 0 or not data[pos:end].startswith(FRAME_TAG):
            raise CorruptVideoError(f"bad FRAME marker at byte {pos}")
        pos = end + 1
        buf = data[pos:pos + frame_bytes]
        if len(buf) != frame_bytes:
            raise CorruptVideoError(
                f"frame {len(frames)} truncated: {len(buf)} of {frame_bytes} bytes")
        pos += frame_bytes
        arr = np.frombuffer(buf, dtype=np.uint8)
        y = arr[:W * H].reshape(H, W)
        u = arr[W * H:W * H + cw * ch].reshape(ch, cw)
        v = arr[W * H + cw * ch:].reshape(ch, cw)
        if sub > 1:
            u = np.repeat(np.repeat(u, sub, 0), sub, 1)[:H, :W]
            v = np.repeat(np.repeat(v, sub, 0), sub, 1)[:H, :W]
        frames.append(yuv_to_rgb(y, u, v, full_range=full))
    if not frames:
        raise CorruptVideoError("Y4M file holds no frames")
    return np.stack(frames)


def write_y4m(path, video: np.ndarray, fps: str = "24:1") -> None:
    """Write 8-bit 4:4:4 full-range Y4M."""
    video = check_video(video)
    T, H, W, _ = video.shape
    out = [f"YUV4MPEG2 W{W} H{H} F{fps} Ip A1:1 C444 XCOLORRANGE=FULL\n".encode()]
    for frame in video:
        out.append(FRAME_TAG + b"\n")
        out.extend(c.tobytes() for c in rgb_to_yuv(frame))
    Path(path).write_bytes(b"".join(out))


# --------------------------------------------------------------------------
# raw planar f32


def sidecar_path(path) -> Path:
    path = Path(path)
    cand = path.with_name(path.name + ".json")
    return cand if cand.exists() else path.with_suffix(".json")


def read_raw(path) -> np.ndarray:
    path = Path(path)
    side = sidecar_path(path)
    if not side.exists():
        raise VideoFormatError(f"no JSON sidecar for {path}")
    meta = json.loads(side.read_text())
    try:
        t, h, w, c = (int(meta[k]) for k in ("t", "h", "w", "c"))
    except KeyError as e:
        raise CorruptVideoError(f"sidecar missing field {e}") from None
    if c != 3:
        raise VideoFormatError(f"only 3-channel video supported, sidecar says c={c}")
    raw = path.read_bytes()
    if len(raw) != t * h * w * c * 4:
        raise CorruptVideoError(
            f"{path}: {len(raw)} bytes, sidecar implies {t * h * w * c * 4}")
    planar = np.frombuffer(raw, dtype="<f4").reshape(t, c, h, w)
    v = planar.transpose(0, 2, 3, 1).astype(np.float64)
    if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
        raise CorruptVideoError(f"{path}: values outside [0, 1]")
    return v


def write_raw(path, video: np.ndarray) -> None:
    video = check_video(video)
    T, H, W, C = video.shape
    path = Path(path)
    planar = np.ascontiguousarray(video.transpose(0, 3, 1, 2), dtype="<f4")
    path.write_bytes(planar.tobytes())
    path.with_name(path.name + ".json").write_text(
        json.dumps({"t": T, "h": H, "w": W, "c": C}))


def load_video(path, format: str | None = None) -> np.ndarray:
    """Load a video as a float64 ``(T, H, W, 3)`` array in ``[0, 1]``.

    ``format`` is ``"y4m"`` or ``"raw_rgb"``; when omitted it is inferred from
    the file extension (``.y4m`` -> Y4M, anything else -> raw).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    if format is None:
        format = "y4m" if path.suffix.lower() == ".y4m" else "raw_rgb"
    if format == "y4m":
        return read_y4m(path)
    if format == "raw_rgb":
        return read_raw(path)
    raise VideoFormatError(f"unknown format {format!r}")


def save_video(path, video, format: str | None = None) -> None:
    path = Path(path)
    if format is None:
        format = "y4m" if path.suffix.lower() == ".y4m" else "raw_rgb"
    if format == "y4m":
        write_y4m(path, video)
    elif format == "raw_rgb":
        write_raw(path, video)
    else:
        raise VideoFormatError(f"unknown format {format!r}")


# --------------------------------------------------------------------------
# patches


@dataclass
class PatchGrid:
    """Non-overlapping ``4x16x16x3`` patches of a reflect-padded video.

    ``patches`` has shape ``(Gt, Gh, Gw, 4, 16, 16, 3)``; ``pad`` is the
    number of pixels appended at the end of each of (T, H, W).
    """

    patches: np.ndarray
    pad: tuple[int, int, int]
    patch_shape: tuple[int, int, int] = PATCH_SHAPE

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return tuple(self.patches.shape[:3])

    def __len__(self):
        return math.prod(self.grid_dims)


def grid_dims_for(dims, patch_shape=PATCH_SHAPE) -> tuple[int, int, int]:
    return tuple(-(-d // p) for d, p in zip(dims, patch_shape))


def reflect_pad(v: np.ndarray, multiples) -> tuple[np.ndarray, tuple[int, ...]]:
    """Reflect-pad the leading ``len(multiples)`` axes up to the given multiples."""
    pad = tuple((-d) % m for d, m in zip(v.shape, multiples))
    if not any(pad):
        return v, pad
    widths = [(0, p) for p in pad] + [(0, 0)] * (v.ndim - len(pad))
    return np.pad(v, widths, mode="reflect"), pad


def extract_patches(v: np.ndarray, patch_shape=PATCH_SHAPE) -> PatchGrid:
    v = check_video(v)
    padded, pad = reflect_pad(v, patch_shape)
    pt, ph, pw = patch_shape
    Gt, Gh, Gw = (padded.shape[i] // patch_shape[i] for i in range(3))
    p = padded.reshape(Gt, pt, Gh, ph, Gw, pw, 3).transpose(0, 2, 4, 1, 3, 5, 6)
    # copy: for a single unpadded patch the transpose is still a view of v
    return PatchGrid(p.copy(), pad, tuple(patch_shape))


def compose_patches(g: PatchGrid, original_dims) -> np.ndarray:
    T, H, W = original_dims
    pt, ph, pw = g.patch_shape
    Gt, Gh, Gw = g.grid_dims
    if grid_dims_for((T, H, W), g.patch_shape) != (Gt, Gh, Gw):
        raise ValueError(
            f"grid {g.grid_dims} does not match video dims {(T, H, W)}")
    full = g.patches.transpose(0, 3, 1, 4, 2, 5, 6).reshape(Gt * pt, Gh * ph, Gw * pw, 3)
    return full[:T, :H, :W].copy()


def patch_footprint(index, dims, patch_shape=PATCH_SHAPE):
    """Slices of the unpadded video covered by grid cell ``index``."""
    return tuple(
        slice(i * p, min((i + 1) * p, d)) for i, p, d in zip(index, patch_shape, dims))
