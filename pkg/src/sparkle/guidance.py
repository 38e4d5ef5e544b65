"""Canny edge extraction and decoupled guidance composition.

The control video for the final synthesis selects, per pixel, the source
video's edges inside the foreground mask and the background video's edges
outside it. Selection is exact; nothing is blended.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import ValidationError
from .masks import MaskVideo
from .media import Frame, luma

_FRAME_RE = re.compile(r"^(\d+)\.png$")

# 5-tap Gaussian, sigma = 1.0
_GAUSS5 = np.exp(-0.5 * np.arange(-2.0, 3.0) ** 2)
_GAUSS5 /= _GAUSS5.sum()

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
_SOBEL_Y = np.array([[-1, -2, -1], [0, 0, 0], [1, 2, 1]], dtype=np.float64)

_EIGHT_CONN = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class EdgeMap:
    """Binary edge map matching the source frame's dimensions."""

    edges: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges)
        if e.dtype != bool:
            e = e.astype(bool)
        if e.ndim != 2 or e.shape[0] < 1 or e.shape[1] < 1:
            raise ValidationError(f"edge map must be 2-d, got shape {e.shape}")
        object.__setattr__(self, "edges", e)

    @property
    def width(self) -> int:
        return self.edges.shape[1]

    @property
    def height(self) -> int:
        return self.edges.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, EdgeMap) and np.array_equal(self.edges, other.edges)


@dataclass(frozen=True, eq=False)
class GuidanceVideo:
    """Composed edge frames plus the per-pixel provenance of each edge.

    ``provenance`` is True where the pixel came from the foreground
    (source-video) layer.
    """

    frames: tuple
    provenance: np.ndarray

    def __post_init__(self):
        if not self.frames:
            raise ValidationError("guidance video must contain frames")
        prov = np.asarray(self.provenance, dtype=bool)
        if prov.shape != (
            len(self.frames),
            self.frames[0].height,
            self.frames[0].width,
        ):
            raise ValidationError("provenance shape must match the edge frames")
        object.__setattr__(self, "provenance", prov)

    @property
    def n_frames(self) -> int:
        return len(self.frames)


def _non_maximum_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray):
    """Keep local maxima along the gradient direction, 4 quantized bins."""
    h, w = mag.shape
    padded = np.pad(mag, 1, mode="constant")

    def shifted(dy, dx):
        return padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]

    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    bin0 = (angle < 22.5) | (angle >= 157.5)
    bin45 = (angle >= 22.5) & (angle < 67.5)
    bin90 = (angle >= 67.5) & (angle < 112.5)
    bin135 = (angle >= 112.5) & (angle < 157.5)

    n1 = np.where(
        bin0,
        shifted(0, 1),
        np.where(bin45, shifted(1, -1), np.where(bin90, shifted(1, 0), shifted(-1, -1))),
    )
    n2 = np.where(
        bin0,
        shifted(0, -1),
        np.where(bin45, shifted(-1, 1), np.where(bin90, shifted(-1, 0), shifted(1, 1))),
    )
    return np.where((mag >= n1) & (mag >= n2), mag, 0.0)


def canny_edges(frame: Frame, low: float = 0.1, high: float = 0.2) -> EdgeMap:
    """Classical Canny with thresholds given as fractions of the maximum
    gradient magnitude.

    Grayscale is BT.601 luma; smoothing is a separable 5-tap Gaussian with
    sigma 1.0; gradients are Sobel; suppression uses 4 quantized
    directions; hysteresis links weak edges to strong ones over
    8-connectivity.
    """
    if not (0.0 < low < high <= 1.0):
        raise ValidationError(
            f"thresholds must satisfy 0 < low < high <= 1, got low={low} high={high}"
        )
    gray = luma(frame)
    blurred = ndimage.convolve1d(gray, _GAUSS5, axis=0, mode="nearest")
    blurred = ndimage.convolve1d(blurred, _GAUSS5, axis=1, mode="nearest")
    gx = ndimage.correlate(blurred, _SOBEL_X, mode="nearest")
    gy = ndimage.correlate(blurred, _SOBEL_Y, mode="nearest")
    mag = np.hypot(gx, gy)
    peak = mag.max()
    # accumulated rounding leaves ~1e-14 residue on flat inputs; genuine
    # edges on the 0..255 luma scale are many orders above this floor
    if peak < 1e-6:
        return EdgeMap(np.zeros(gray.shape, dtype=bool))

    nms = _non_maximum_suppression(mag, gx, gy)
    strong = nms >= high * peak
    weak = nms >= low * peak
    if not strong.any():
        return EdgeMap(np.zeros(gray.shape, dtype=bool))

    labels, _ = ndimage.label(weak, structure=_EIGHT_CONN)
    keep = np.unique(labels[strong])
    edges = np.isin(labels, keep[keep != 0])
    return EdgeMap(edges)


def compose_guidance(
    src_edges: Sequence[EdgeMap],
    bg_edges: Sequence[EdgeMap],
    mask: MaskVideo,
    dilation_radius: int = 0,
) -> GuidanceVideo:
    """Per-pixel selection: source edges inside the mask, background
    edges outside.

    The composed length is the shorter of the two edge sequences; the mask
    must cover at least that many frames. An optional dilation widens the
    foreground region before selection to hide boundary seams.
    """
    if not src_edges or not bg_edges:
        raise ValidationError("edge sequences must be non-empty")
    n = min(len(src_edges), len(bg_edges))
    if mask.n_frames < n:
        raise ValidationError(
            f"mask covers {mask.n_frames} frames but {n} are being composed"
        )
    h, w = src_edges[0].height, src_edges[0].width
    for seq_name, seq in (("source", src_edges), ("background", bg_edges)):
        for i, em in enumerate(seq[:n]):
            if (em.height, em.width) != (h, w):
                raise ValidationError(
                    f"{seq_name} edge frame {i} is {em.width}x{em.height}, "
                    f"expected {w}x{h}"
                )
    if (mask.height, mask.width) != (h, w):
        raise ValidationError(
            f"mask is {mask.width}x{mask.height}, expected {w}x{h}"
        )
    if dilation_radius < 0:
        raise ValidationError("dilation radius must be >= 0")

    sel = mask.masks[:n]
    if dilation_radius > 0:
        size = 2 * dilation_radius + 1
        struct = np.ones((1, size, size), dtype=bool)
        sel = ndimage.binary_dilation(sel, structure=struct)

    src = np.stack([em.edges for em in src_edges[:n]])
    bg = np.stack([em.edges for em in bg_edges[:n]])
    out = np.where(sel, src, bg)
    return GuidanceVideo(
        frames=tuple(EdgeMap(out[t]) for t in range(n)),
        provenance=sel.copy(),
    )


# ---------------------------------------------------------------------------
# Persistence: white-on-black 8-bit png-dir plus an RLE provenance sidecar
# ---------------------------------------------------------------------------

def _rle_encode(bits: np.ndarray) -> dict:
    flat = bits.ravel()
    if flat.size == 0:
        return {"first": 0, "runs": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    return {
        "first": int(flat[0]),
        "runs": np.diff(bounds).astype(int).tolist(),
    }


def _rle_decode(spec: dict, shape: tuple[int, int]) -> np.ndarray:
    total = shape[0] * shape[1]
    flat = np.zeros(total, dtype=bool)
    value = bool(spec["first"])
    pos = 0
    for run in spec["runs"]:
        if value:
            flat[pos:pos + run] = True
        pos += run
        value = not value
    if pos != total:
        raise ValidationError(f"provenance runs cover {pos} pixels, expected {total}")
    return flat.reshape(shape)


def save_edge_video(frames: Sequence[EdgeMap], path) -> None:
    """Edge frames as 8-bit PNGs, edge pixels at 255."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for p in path.iterdir():
        if _FRAME_RE.match(p.name):
            p.unlink()
    for i, em in enumerate(frames):
        img = Image.fromarray(em.edges.astype(np.uint8) * 255, mode="L")
        img.save(path / f"{i:06d}.png", format="PNG")


def load_edge_video(path) -> list[EdgeMap]:
    path = Path(path)
    if not path.is_dir():
        raise ValidationError(f"no such directory: {path}")
    entries = sorted(
        (int(m.group(1)), p)
        for p in path.iterdir()
        if (m := _FRAME_RE.match(p.name))
    )
    if not entries:
        raise ValidationError(f"no edge frames found in {path}")
    out = []
    for _, p in entries:
        with Image.open(p) as img:
            out.append(EdgeMap(np.asarray(img.convert("L")) > 127))
    return out


def save_guidance(gv: GuidanceVideo, path) -> None:
    """Guidance as png-dir plus ``provenance.json`` (run-length encoded)."""
    path = Path(path)
    save_edge_video(gv.frames, path)
    payload = {
        "width": gv.frames[0].width,
        "height": gv.frames[0].height,
        "frames": [_rle_encode(gv.provenance[t]) for t in range(gv.n_frames)],
    }
    (path / "provenance.json").write_text(
        json.dumps(payload, sort_keys=True) + "\n"
    )


def load_guidance(path) -> GuidanceVideo:
    path = Path(path)
    frames = load_edge_video(path)
    spec = json.loads((path / "provenance.json").read_text())
    shape = (int(spec["height"]), int(spec["width"]))
    prov = np.stack([_rle_decode(f, shape) for f in spec["frames"]])
    return GuidanceVideo(frames=tuple(frames), provenance=prov)
