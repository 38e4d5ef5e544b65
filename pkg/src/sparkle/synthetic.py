"""Synthetic clips and flow fields with known ground-truth motion.

These generators back the desk-scale validation of the motion filter:
noise-textured clips with a static camera and a moving block, circular
panning clips, rotating clips, and flow fields synthesized from known
homographies with optional outlier corruption.
"""

from __future__ import annotations


import numpy as np

from .media import Frame, VideoClip
from .motion import FlowField


def noise_frame(rng: np.random.Generator, height: int, width: int) -> Frame:
    return Frame(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def static_clip_with_moving_block(
    seed: int,
    n_frames: int = 16,
    size: int = 64,
    fps=8,
    block: int = 8,
    step: tuple[int, int] = (1, 1),
) -> VideoClip:
    """Static camera: fixed noise background, a textured block walking across it."""
    rng = np.random.default_rng(seed)
    background = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    patch = rng.integers(0, 256, size=(block, block, 3), dtype=np.uint8)
    frames = []
    span = size - block
    for t in range(n_frames):
        px = background.copy()
        x = (2 + t * step[0]) % span
        y = (2 + t * step[1]) % span
        px[y:y + block, x:x + block] = patch
        frames.append(Frame(px))
    return VideoClip(frames, fps)


def panning_clip(
    seed: int,
    n_frames: int = 16,
    size: int = 64,
    fps=8,
    velocity: tuple[int, int] = (1, 0),
) -> VideoClip:
    """Global integer translation of ``velocity`` pixels per frame (circular)."""
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8)
    frames = []
    for t in range(n_frames):
        shifted = np.roll(base, shift=(t * velocity[1], t * velocity[0]), axis=(0, 1))
        frames.append(Frame(shifted))
    return VideoClip(frames, fps)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0, h - 1.001)
    xs = np.clip(xs, 0, w - 1.001)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    fy = (ys - y0)[..., None]
    fx = (xs - x0)[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bot * fy


def _smooth_noise_canvas(
    rng: np.random.Generator, height: int, width: int, cell: int = 4
) -> np.ndarray:
    """Noise with spatial correlation: coarse grid upsampled bilinearly.

    Unlike iid noise, this texture stays matchable under the subpixel
    resampling a rotation performs.
    """
    coarse = rng.uniform(0, 255, size=(height // cell + 2, width // cell + 2, 3))
    ys = np.arange(height) / cell
    xs = np.arange(width) / cell
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    return _bilinear_sample(coarse, gy, gx)


def rotating_clip(
    seed: int,
    n_frames: int = 16,
    size: int = 64,
    fps=8,
    deg_per_frame: float = 1.25,
) -> VideoClip:
    """Camera rotation about the frame centre, ``deg_per_frame`` per frame.

    Frames are center crops of a larger smooth-noise canvas so rotated
    content is always defined.
    """
    rng = np.random.default_rng(seed)
    canvas = _smooth_noise_canvas(rng, 2 * size, 2 * size)
    cy = cx = size  # canvas centre
    ys, xs = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    # output pixel (x, y) relative to the crop centre
    ry = ys - (size - 1) / 2.0
    rx = xs - (size - 1) / 2.0
    frames = []
    for t in range(n_frames):
        theta = np.deg2rad(t * deg_per_frame)
        c, s = np.cos(theta), np.sin(theta)
        sx = cx + c * rx - s * ry
        sy = cy + s * rx + c * ry
        px = _bilinear_sample(canvas, sy, sx)
        frames.append(Frame(np.clip(np.rint(px), 0, 255).astype(np.uint8)))
    return VideoClip(frames, fps)


# ---------------------------------------------------------------------------
# Homography-driven flow synthesis
# ---------------------------------------------------------------------------

def random_homography(rng: np.random.Generator) -> np.ndarray:
    """A well-conditioned random homography near the identity, H[2,2] = 1."""
    H = np.eye(3)
    H[0, 0] += rng.uniform(-0.05, 0.05)
    H[0, 1] += rng.uniform(-0.05, 0.05)
    H[1, 0] += rng.uniform(-0.05, 0.05)
    H[1, 1] += rng.uniform(-0.05, 0.05)
    H[0, 2] = rng.uniform(-3.0, 3.0)
    H[1, 2] = rng.uniform(-3.0, 3.0)
    H[2, 0] = rng.uniform(-1e-4, 1e-4)
    H[2, 1] = rng.uniform(-1e-4, 1e-4)
    return H


def flow_from_homography(H: np.ndarray, height: int, width: int) -> FlowField:
    """The exact dense flow field induced by mapping pixels through ``H``."""
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    w = H[2, 0] * xs + H[2, 1] * ys + H[2, 2]
    px = (H[0, 0] * xs + H[0, 1] * ys + H[0, 2]) / w
    py = (H[1, 0] * xs + H[1, 1] * ys + H[1, 2]) / w
    return FlowField(np.stack([px - xs, py - ys], axis=-1))


def corrupt_flow(
    flow: FlowField,
    fraction: float,
    rng: np.random.Generator,
    lo: float = -10.0,
    hi: float = 10.0,
) -> FlowField:
    """Replace a random ``fraction`` of vectors with uniform noise in [lo, hi]."""
    vec = flow.vectors.copy()
    h, w = vec.shape[:2]
    n = h * w
    k = int(round(fraction * n))
    chosen = rng.choice(n, size=k, replace=False)
    noise = rng.uniform(lo, hi, size=(k, 2))
    flat = vec.reshape(n, 2)
    flat[chosen] = noise
    return FlowField(flat.reshape(h, w, 2))
