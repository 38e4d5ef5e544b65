"""Per-frame binary mask videos and their png-dir persistence.

Masks are stored as 1-bit PNGs named ``NNNNNN.png``; foreground is white.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ValidationError

_FRAME_RE = re.compile(r"^(\d+)\.png$")


@dataclass(frozen=True, eq=False)
class MaskVideo:
    """Boolean array of shape (n_frames, height, width); True is foreground."""

    masks: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.masks)
        if m.dtype != bool:
            m = m.astype(bool)
        if m.ndim != 3:
            raise ValidationError(f"mask video must be (n, h, w), got shape {m.shape}")
        if m.shape[0] < 1 or m.shape[1] < 1 or m.shape[2] < 1:
            raise ValidationError("mask video must be non-empty")
        object.__setattr__(self, "masks", m)

    @property
    def n_frames(self) -> int:
        return self.masks.shape[0]

    @property
    def height(self) -> int:
        return self.masks.shape[1]

    @property
    def width(self) -> int:
        return self.masks.shape[2]

    def __eq__(self, other) -> bool:
        return isinstance(other, MaskVideo) and np.array_equal(self.masks, other.masks)


def save_mask_video(mask: MaskVideo, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for p in path.iterdir():
        if _FRAME_RE.match(p.name):
            p.unlink()
    for i in range(mask.n_frames):
        img = Image.fromarray(mask.masks[i].astype(np.uint8) * 255, mode="L")
        img.convert("1").save(path / f"{i:06d}.png", format="PNG")


def load_mask_video(path) -> MaskVideo:
    path = Path(path)
    if not path.is_dir():
        raise ValidationError(f"no such directory: {path}")
    entries = sorted(
        (int(m.group(1)), p)
        for p in path.iterdir()
        if (m := _FRAME_RE.match(p.name))
    )
    if not entries:
        raise ValidationError(f"no mask frames found in {path}")
    planes = []
    for _, p in entries:
        with Image.open(p) as img:
            planes.append(np.asarray(img.convert("L")) > 127)
    shapes = {pl.shape for pl in planes}
    if len(shapes) != 1:
        raise ValidationError(f"mixed mask dimensions in {path}")
    return MaskVideo(np.stack(planes))
