"""Frame and clip containers plus the on-disk clip formats.

Two interchange formats are supported:

* ``png-dir``: a directory of zero-padded ``NNNNNN.png`` frames plus a
  ``meta.txt`` sidecar containing ``fps=<num>/<den>``. Lossless.
* ``y4m``: a raw YUV4MPEG2 stream, C420 only, converted to and from RGB
  with the BT.601 full-range equations. Lossy through chroma averaging.

All frame sampling conventions used by the pipeline live here as well.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError

META_NAME = "meta.txt"
_FRAME_RE = re.compile(r"^(\d+)\.png$")

# Indices into a clip; always strictly increasing, never out of range.
FrameIndexList = list


def as_fraction(value) -> Fraction:
    """Coerce ints, strings like ``"30000/1001"``, and floats to Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value.strip())
    if isinstance(value, float):
        # read the decimal repr, not the binary expansion
        return Fraction(str(value))
    raise ValidationError(f"cannot interpret {value!r} as a frame rate")


def round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


@dataclass(frozen=True, eq=False)
class Frame:
    """One RGB image, 8 bit per channel, stored as a (height, width, 3) array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.dtype != np.uint8:
            px = px.astype(np.uint8)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValidationError(f"frame must be (h, w, 3) RGB, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValidationError("frame must be at least 1x1")
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, Frame) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True, eq=False)
class VideoClip:
    """An ordered list of same-sized frames with a positive rational frame rate."""

    frames: tuple
    fps: Fraction

    def __init__(self, frames: Sequence[Frame], fps):
        frames = tuple(frames)
        if not frames:
            raise ValidationError("clip must contain at least one frame")
        w, h = frames[0].width, frames[0].height
        for i, f in enumerate(frames):
            if f.width != w or f.height != h:
                raise ValidationError(
                    f"mixed frame dimensions: frame {i} is {f.width}x{f.height}, "
                    f"expected {w}x{h}"
                )
        fps = as_fraction(fps)
        if fps <= 0:
            raise ValidationError(f"fps must be positive, got {fps}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "fps", fps)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def width(self) -> int:
        return self.frames[0].width

    @property
    def height(self) -> int:
        return self.frames[0].height

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VideoClip)
            and self.fps == other.fps
            and len(self.frames) == len(other.frames)
            and all(a == b for a, b in zip(self.frames, other.frames))
        )


# ---------------------------------------------------------------------------
# Sampling conventions
# ---------------------------------------------------------------------------

def sample_at_fps(clip: VideoClip, target_fps) -> FrameIndexList:
    """Indices of frames sampled at ``target_fps``.

    Returns round(k * fps / target_fps) for k = 0, 1, ... while the index
    stays in range, deduplicated. Rounding is half-up, so index 0 is always
    present and the last second of the clip stays represented. A target at
    or above the native rate returns every index.
    """
    target = as_fraction(target_fps)
    if target <= 0:
        raise ValidationError(f"target fps must be positive, got {target}")
    step = clip.fps / target
    out: list[int] = []
    k = 0
    while True:
        idx = round_half_up(k * step)
        if idx >= clip.n_frames:
            break
        if not out or idx != out[-1]:
            out.append(idx)
        k += 1
    return out


def uniform_sample_excluding_first(n_frames: int, k: int) -> FrameIndexList:
    """Evenly spaced indices over (0, n_frames - 1], never including index 0.

    With at least ``k`` candidates this returns round(j * (n_frames - 1) / k)
    for j = 1..k, which always ends at the last frame. With fewer candidates
    every index from 1 on is returned.
    """
    if n_frames < 2:
        raise ValidationError(f"need at least 2 frames to sample, got {n_frames}")
    if k < 1:
        raise ValidationError(f"sample count must be >= 1, got {k}")
    if n_frames - 1 < k:
        return list(range(1, n_frames))
    span = n_frames - 1
    return [round_half_up(Fraction(j * span, k)) for j in range(1, k + 1)]


# ---------------------------------------------------------------------------
# BT.601 full-range color conversion
# ---------------------------------------------------------------------------

def rgb_to_ycbcr(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full-range BT.601 RGB -> (Y, Cb, Cr), float64 planes."""
    r = pixels[..., 0].astype(np.float64)
    g = pixels[..., 1].astype(np.float64)
    b = pixels[..., 2].astype(np.float64)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b
    return y, cb, cr


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    """Full-range BT.601 (Y, Cb, Cr) -> uint8 RGB."""
    y = y.astype(np.float64)
    cb = cb.astype(np.float64) - 128.0
    cr = cr.astype(np.float64) - 128.0
    r = y + 1.402 * cr
    g = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    rgb = np.stack([r, g, b], axis=-1)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def luma(frame: Frame) -> np.ndarray:
    """BT.601 luma plane as float64."""
    return rgb_to_ycbcr(frame.pixels)[0]


def _subsample_420(plane: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _upsample_420(plane: np.ndarray, h: int, w: int) -> np.ndarray:
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)[:h, :w]


# ---------------------------------------------------------------------------
# png-dir format
# ---------------------------------------------------------------------------

def save_frame(frame: Frame, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(frame.pixels, mode="RGB").save(path, format="PNG")


def load_frame(path) -> Frame:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such image: {path}")
    with Image.open(path) as img:
        return Frame(np.asarray(img.convert("RGB")))


def _load_png_dir(path: Path) -> VideoClip:
    if not path.is_dir():
        raise ValidationError(f"no such directory: {path}")
    entries = []
    for p in path.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            entries.append((int(m.group(1)), p))
    if not entries:
        raise ValidationError(f"no frames found in {path}")
    entries.sort()
    meta = path / META_NAME
    if not meta.exists():
        raise ValidationError(f"missing {META_NAME} fps sidecar in {path}")
    text = meta.read_text().strip()
    if not text.startswith("fps="):
        raise ValidationError(f"malformed {META_NAME}: expected 'fps=<num>/<den>'")
    fps = as_fraction(text[len("fps="):])
    frames = [load_frame(p) for _, p in entries]
    return VideoClip(frames, fps)


def _save_png_dir(clip: VideoClip, path: Path) -> None:
    path.mkdir(parents=True, exist_ok=True)
    # drop stale frames from a previous, possibly longer, write
    for p in path.iterdir():
        if _FRAME_RE.match(p.name):
            p.unlink()
    for i, frame in enumerate(clip.frames):
        save_frame(frame, path / f"{i:06d}.png")
    fps = clip.fps
    (path / META_NAME).write_text(f"fps={fps.numerator}/{fps.denominator}\n")


# ---------------------------------------------------------------------------
# y4m format (YUV4MPEG2, C420, BT.601 full range)
# ---------------------------------------------------------------------------

def _parse_y4m_header(line: bytes) -> tuple[int, int, Fraction]:
    try:
        text = line.decode("ascii")
    except UnicodeDecodeError as exc:
        raise ValidationError("malformed y4m header: not ascii") from exc
    tokens = text.strip().split(" ")
    if not tokens or tokens[0] != "YUV4MPEG2":
        raise ValidationError("malformed y4m header: missing YUV4MPEG2 magic")
    width = height = None
    fps = None
    colorspace = "420"
    for tok in tokens[1:]:
        if not tok:
            continue
        key, val = tok[0], tok[1:]
        if key == "W":
            width = int(val)
        elif key == "H":
            height = int(val)
        elif key == "F":
            num, den = val.split(":")
            fps = Fraction(int(num), int(den))
        elif key == "C":
            colorspace = val
    if width is None or height is None or fps is None:
        raise ValidationError("malformed y4m header: W, H and F are required")
    if colorspace != "420":
        raise ValidationError(f"unsupported y4m colorspace C{colorspace}; only C420")
    if width % 2 or height % 2:
        raise ValidationError("y4m C420 requires even frame dimensions")
    if width < 1 or height < 1 or fps <= 0:
        raise ValidationError("malformed y4m header: non-positive dimension or rate")
    return width, height, fps


def _load_y4m(path: Path) -> VideoClip:
    data = path.read_bytes()
    nl = data.find(b"\n")
    if nl < 0:
        raise ValidationError("malformed y4m header: no newline")
    width, height, fps = _parse_y4m_header(data[:nl])
    ysize = width * height
    csize = (width // 2) * (height // 2)
    frames = []
    pos = nl + 1
    while pos < len(data):
        fnl = data.find(b"\n", pos)
        if fnl < 0 or not data[pos:fnl].startswith(b"FRAME"):
            raise ValidationError("malformed y4m stream: bad FRAME marker")
        pos = fnl + 1
        end = pos + ysize + 2 * csize
        if end > len(data):
            raise ValidationError("truncated y4m frame payload")
        yp = np.frombuffer(data[pos:pos + ysize], dtype=np.uint8).reshape(height, width)
        cb = np.frombuffer(
            data[pos + ysize:pos + ysize + csize], dtype=np.uint8
        ).reshape(height // 2, width // 2)
        cr = np.frombuffer(
            data[pos + ysize + csize:end], dtype=np.uint8
        ).reshape(height // 2, width // 2)
        rgb = ycbcr_to_rgb(
            yp.astype(np.float64),
            _upsample_420(cb.astype(np.float64), height, width),
            _upsample_420(cr.astype(np.float64), height, width),
        )
        frames.append(Frame(rgb))
        pos = end
    if not frames:
        raise ValidationError("no frames found in y4m stream")
    return VideoClip(frames, fps)


def _save_y4m(clip: VideoClip, path: Path) -> None:
    if clip.width % 2 or clip.height % 2:
        raise ValidationError("y4m C420 requires even frame dimensions")
    path.parent.mkdir(parents=True, exist_ok=True)
    fps = clip.fps
    header = f"YUV4MPEG2 W{clip.width} H{clip.height} F{fps.numerator}:{fps.denominator} Ip A1:1 C420\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for frame in clip.frames:
            y, cb, cr = rgb_to_ycbcr(frame.pixels)
            planes = (
                y,
                _subsample_420(cb),
                _subsample_420(cr),
            )
            fh.write(b"FRAME\n")
            for plane in planes:
                fh.write(np.clip(np.rint(plane), 0, 255).astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Public clip I/O
# ---------------------------------------------------------------------------

def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("png-dir", "y4m"):
            raise ValidationError(f"unknown clip format {fmt!r}")
        return fmt
    if path.suffix.lower() == ".y4m":
        return "y4m"
    return "png-dir"


def load_clip(path, fmt: str | None = None) -> VideoClip:
    """Load a clip from a png-dir or a y4m stream.

    The format is inferred from the path when not given: ``.y4m`` files are
    y4m, everything else is treated as a png-dir.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    if fmt == "png-dir":
        return _load_png_dir(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    return _load_y4m(path)


def write_clip(clip: VideoClip, path, fmt: str | None = None) -> None:
    """Write a clip as a png-dir (lossless) or as a y4m stream (C420)."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    try:
        if fmt == "png-dir":
            _save_png_dir(clip, path)
        else:
            _save_y4m(clip, path)
    except OSError as exc:
        raise ValidationError(f"cannot write clip to {path}: {exc}") from exc
