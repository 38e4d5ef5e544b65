"""Optical flow, homography fitting, and the static-camera classifier.

The flow estimator is a pyramidal block matcher: dependency free and
adequate for deciding whether a global rigid motion exists between two
frames. Precomputed neural flow can be fed in through Middlebury ``.flo``
files instead; the classifier only consumes :class:`FlowField`.

A frame pair is ruled "camera moving" when a RANSAC-fit homography
explains at least ``r_min`` of the flow-derived correspondences and the
mean per-pixel flow magnitude reaches ``m_min``. A clip is static when no
consecutive sampled pair moves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .media import Frame, VideoClip, as_fraction, luma, sample_at_fps

FLO_MAGIC = 202021.25


@dataclass(frozen=True)
class FlowParams:
    levels: int = 3
    block_size: int = 8
    search_radius: int = 4


@dataclass(frozen=True)
class RansacParams:
    iterations: int = 1000
    threshold_px: float = 3.0
    grid_stride: int = 4


@dataclass(frozen=True)
class MotionParams:
    flow: FlowParams = field(default_factory=FlowParams)
    ransac: RansacParams = field(default_factory=RansacParams)
    sample_fps: Fraction = Fraction(2)
    r_min: float = 0.5
    m_min: float = 1.0
    seed: int = 0


@dataclass(frozen=True, eq=False)
class FlowField:
    """Dense per-pixel displacement field, shape (height, width, 2) as (u, v)."""

    vectors: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 3 or vec.shape[2] != 2:
            raise ValidationError(f"flow must be (h, w, 2), got shape {vec.shape}")
        if vec.shape[0] < 1 or vec.shape[1] < 1:
            raise ValidationError("flow field must be at least 1x1")
        if not np.all(np.isfinite(vec)):
            raise ValidationError("flow field contains NaN or Inf")
        object.__setattr__(self, "vectors", vec)

    @property
    def width(self) -> int:
        return self.vectors.shape[1]

    @property
    def height(self) -> int:
        return self.vectors.shape[0]

    @property
    def u(self) -> np.ndarray:
        return self.vectors[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.vectors[..., 1]


@dataclass(frozen=True, eq=False)
class HomographyFit:
    """3x3 homography plus the inlier bookkeeping of the fit."""

    H: np.ndarray
    inlier_ratio: float
    inlier_mask: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64)
        if H.shape != (3, 3):
            raise ValidationError("homography must be 3x3")
        mask = np.asarray(self.inlier_mask, dtype=bool)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "inlier_mask", mask)


@dataclass(frozen=True)
class MotionVerdict:
    pair_indices: tuple
    pair_moving: tuple
    inlier_ratio: tuple
    mean_magnitude: tuple
    clip_static: bool


# ---------------------------------------------------------------------------
# Middlebury .flo reader
# ---------------------------------------------------------------------------

def read_flow_file(path) -> FlowField:
    """Read a Middlebury .flo file: float32 magic, int32 w/h, interleaved (u, v)."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    data = path.read_bytes()
    if len(data) < 12:
        raise ValidationError(f"not a .flo file: {path} (too short)")
    magic = np.frombuffer(data[:4], dtype="<f4")[0]
    if magic != np.float32(FLO_MAGIC):
        raise ValidationError(f"not a .flo file: {path} (bad magic {magic!r})")
    w, h = (int(x) for x in np.frombuffer(data[4:12], dtype="<i4"))
    if w < 1 or h < 1:
        raise ValidationError(f"not a .flo file: {path} (bad dimensions {w}x{h})")
    expected = h * w * 2
    payload = np.frombuffer(data[12:], dtype="<f4")
    if payload.size < expected:
        raise ValidationError(
            f"truncated .flo payload: {path} has {payload.size} floats, "
            f"expected {expected}"
        )
    return FlowField(payload[:expected].astype(np.float64).reshape(h, w, 2))


# ---------------------------------------------------------------------------
# Pyramidal block-matching flow
# ---------------------------------------------------------------------------

def _downsample2(img: np.ndarray) -> np.ndarray:
    h, w = img.shape
    if h % 2 or w % 2:
        img = np.pad(img, ((0, h % 2), (0, w % 2)), mode="edge")
        h, w = img.shape
    return img.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _block_reduce_sum(arr: np.ndarray, block: int) -> np.ndarray:
    h, w = arr.shape
    return arr.reshape(h // block, block, w // block, block).sum(axis=(1, 3))


def _pad_to_blocks(img: np.ndarray, block: int) -> np.ndarray:
    h, w = img.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    return img


def _block_match_level(
    a: np.ndarray, b: np.ndarray, base: np.ndarray, block: int, radius: int
) -> np.ndarray:
    """One pyramid level: per-block integer displacement around ``base``.

    ``base`` is a dense (h, w, 2) field of integer starting offsets; the
    returned field is dense as well, constant within each block. Candidate
    offsets are ordered nearest-first so SAD ties resolve to the smallest
    displacement.
    """
    h, w = a.shape
    ap = _pad_to_blocks(a, block)
    bp = _pad_to_blocks(b, block)
    hp, wp = ap.shape
    nby, nbx = hp // block, wp // block

    # one starting offset per block, read at the block centre
    cy = np.minimum(np.arange(nby) * block + block // 2, h - 1)
    cx = np.minimum(np.arange(nbx) * block + block // 2, w - 1)
    base_blocks = np.rint(base[np.ix_(cy, cx)]).astype(np.int64)

    # warp b by the per-block base offset so the residual search is uniform.
    # reads clamp at the border; blocks with differing bases disagree along
    # their shared edges, which is acceptable for rigid classification.
    max_base = int(np.abs(base_blocks).max()) if base_blocks.size else 0
    pad = radius + max_base + 1
    bpad = np.pad(bp, pad, mode="edge")
    b_comp = np.empty_like(bp)
    for by in range(nby):
        for bx in range(nbx):
            du, dv = base_blocks[by, bx]
            y0 = by * block + pad + dv
            x0 = bx * block + pad + du
            b_comp[by * block:(by + 1) * block, bx * block:(bx + 1) * block] = bpad[
                y0:y0 + block, x0:x0 + block
            ]

    offsets = [
        (du, dv)
        for dv in range(-radius, radius + 1)
        for du in range(-radius, radius + 1)
    ]
    offsets.sort(key=lambda o: (o[0] * o[0] + o[1] * o[1], o[1], o[0]))

    cpad = radius + 1
    b_comp_pad = np.pad(b_comp, cpad, mode="edge")
    sads = np.empty((len(offsets), nby, nbx))
    for i, (du, dv) in enumerate(offsets):
        shifted = b_comp_pad[cpad + dv:cpad + dv + hp, cpad + du:cpad + du + wp]
        sads[i] = _block_reduce_sum(np.abs(ap - shifted), block)
    best = np.argmin(sads, axis=0)

    off_arr = np.asarray(offsets)
    flow_blocks = base_blocks + off_arr[best]

    # textureless blocks carry no signal: force zero total displacement
    block_max = ap.reshape(nby, block, nbx, block).max(axis=(1, 3))
    block_min = ap.reshape(nby, block, nbx, block).min(axis=(1, 3))
    flow_blocks[block_max == block_min] = 0

    dense = np.repeat(np.repeat(flow_blocks, block, axis=0), block, axis=1)
    return dense[:h, :w].astype(np.float64)


def _upsample_flow(flow: np.ndarray, h: int, w: int) -> np.ndarray:
    up = np.repeat(np.repeat(flow, 2, axis=0), 2, axis=1)[:h, :w]
    if up.shape[0] < h or up.shape[1] < w:
        up = np.pad(
            up, ((0, h - up.shape[0]), (0, w - up.shape[1]), (0, 0)), mode="edge"
        )
    return up * 2.0


def compute_flow(a: Frame, b: Frame, params: FlowParams | None = None) -> FlowField:
    """Dense flow from ``a`` to ``b`` via coarse-to-fine block matching.

    Textureless (zero-gradient) regions return (0, 0).
    """
    params = params or FlowParams()
    if (a.width, a.height) != (b.width, b.height):
        raise ValidationError(
            f"frame dimension mismatch: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    ga, gb = luma(a), luma(b)

    pyr_a, pyr_b = [ga], [gb]
    for _ in range(params.levels - 1):
        if min(pyr_a[-1].shape) < 2 * params.block_size:
            break
        pyr_a.append(_downsample2(pyr_a[-1]))
        pyr_b.append(_downsample2(pyr_b[-1]))

    flow = np.zeros(pyr_a[-1].shape + (2,))
    for level in range(len(pyr_a) - 1, -1, -1):
        la, lb = pyr_a[level], pyr_b[level]
        if level < len(pyr_a) - 1:
            flow = _upsample_flow(flow, la.shape[0], la.shape[1])
        flow = _block_match_level(la, lb, flow, params.block_size, params.search_radius)
    return FlowField(flow)


# ---------------------------------------------------------------------------
# RANSAC homography
# ---------------------------------------------------------------------------

def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Similarity normalization: centroid to origin, mean distance sqrt(2).

    Returns (normalized points, 3x3 transform T with pn = T @ p).
    """
    centroid = pts.mean(axis=0)
    d = np.linalg.norm(pts - centroid, axis=1).mean()
    scale = np.sqrt(2.0) / d if d > 1e-12 else 1.0
    T = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return (pts - centroid) * scale, T


def _nullspace(A: np.ndarray) -> np.ndarray:
    """Unit vector(s) minimizing ||A h||: smallest eigenvector of A^T A.

    ``A`` may be (m, 9) or batched (k, m, 9); returns (9,) or (k, 9).
    """
    AtA = np.swapaxes(A, -1, -2) @ A
    _, vecs = np.linalg.eigh(AtA)
    return vecs[..., :, 0]


def _dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares homography via the normalized direct linear transform."""
    sn, Ts = _normalize_points(src)
    dn, Td = _normalize_points(dst)
    n = len(src)
    A = np.zeros((2 * n, 9))
    x, y = sn[:, 0], sn[:, 1]
    X, Y = dn[:, 0], dn[:, 1]
    A[0::2, 3] = -x
    A[0::2, 4] = -y
    A[0::2, 5] = -1.0
    A[0::2, 6] = Y * x
    A[0::2, 7] = Y * y
    A[0::2, 8] = Y
    A[1::2, 0] = x
    A[1::2, 1] = y
    A[1::2, 2] = 1.0
    A[1::2, 6] = -X * x
    A[1::2, 7] = -X * y
    A[1::2, 8] = -X
    Hn = _nullspace(A).reshape(3, 3)
    return np.linalg.inv(Td) @ Hn @ Ts


def _dlt_batch(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Minimal 4-point DLT for a batch of samples, shape (k, 4, 2) each."""
    k = src.shape[0]

    def normalize(pts):
        centroid = pts.mean(axis=1, keepdims=True)
        d = np.linalg.norm(pts - centroid, axis=2).mean(axis=1)
        scale = np.where(d > 1e-12, np.sqrt(2.0) / np.maximum(d, 1e-12), 1.0)
        return (pts - centroid) * scale[:, None, None], centroid[:, 0, :], scale

    sn, sc, ss = normalize(src)
    dn, dc, ds = normalize(dst)

    A = np.zeros((k, 8, 9))
    x, y = sn[..., 0], sn[..., 1]
    X, Y = dn[..., 0], dn[..., 1]
    A[:, 0::2, 3] = -x
    A[:, 0::2, 4] = -y
    A[:, 0::2, 5] = -1.0
    A[:, 0::2, 6] = Y * x
    A[:, 0::2, 7] = Y * y
    A[:, 0::2, 8] = Y
    A[:, 1::2, 0] = x
    A[:, 1::2, 1] = y
    A[:, 1::2, 2] = 1.0
    A[:, 1::2, 6] = -X * x
    A[:, 1::2, 7] = -X * y
    A[:, 1::2, 8] = -X
    Hn = _nullspace(A).reshape(k, 3, 3)

    # denormalize: H = inv(Td) @ Hn @ Ts
    Ts = np.zeros((k, 3, 3))
    Ts[:, 0, 0] = ss
    Ts[:, 1, 1] = ss
    Ts[:, 2, 2] = 1.0
    Ts[:, 0, 2] = -ss * sc[:, 0]
    Ts[:, 1, 2] = -ss * sc[:, 1]
    Td_inv = np.zeros((k, 3, 3))
    inv_ds = 1.0 / ds
    Td_inv[:, 0, 0] = inv_ds
    Td_inv[:, 1, 1] = inv_ds
    Td_inv[:, 2, 2] = 1.0
    Td_inv[:, 0, 2] = dc[:, 0]
    Td_inv[:, 1, 2] = dc[:, 1]
    return Td_inv @ Hn @ Ts


def _reprojection_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Euclidean reprojection error of each correspondence.

    ``H`` may be (3, 3) or a batch (k, 3, 3); errors are (n,) or (k, n).
    Points for which the projection degenerates get infinite error.
    """
    ones = np.ones((src.shape[0], 1))
    sh = np.concatenate([src, ones], axis=1).T  # (3, n)
    proj = H @ sh
    w = proj[..., 2, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        px = proj[..., 0, :] / w
        py = proj[..., 1, :] / w
    err = np.hypot(px - dst[:, 0], py - dst[:, 1])
    bad = (np.abs(w) < 1e-12) | ~np.isfinite(err)
    return np.where(bad, np.inf, err)


def _any_collinear(quads: np.ndarray) -> np.ndarray:
    """True per sample when any 3 of its 4 points are (nearly) collinear."""
    out = np.zeros(quads.shape[0], dtype=bool)
    for i, j, k in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        v1 = quads[:, j] - quads[:, i]
        v2 = quads[:, k] - quads[:, i]
        area = np.abs(v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0])
        out |= area < 1e-9
    return out


def _refit_trimmed(
    src: np.ndarray, dst: np.ndarray, mask: np.ndarray, threshold: float
) -> np.ndarray:
    """Least-squares refit on inliers, iteratively trimmed.

    Outliers that land inside the RANSAC threshold by chance bias a single
    least-squares pass well above the accuracy the noiseless inliers allow.
    Re-fitting while shrinking the cut to three times the median residual
    discards them within a few rounds; the floor keeps exact fits stable.
    """
    cur = mask
    H = _dlt(src[cur], dst[cur])
    for _ in range(3):
        err = _reprojection_errors(H, src, dst)
        med = float(np.median(err[cur]))
        cut = min(threshold, max(3.0 * med, 1e-8))
        new = err < cut
        if new.sum() < 4:
            break
        cur = new
        H = _dlt(src[cur], dst[cur])
    return H


def estimate_homography_ransac(
    flow: FlowField, params: RansacParams | None = None, seed: int = 0
) -> HomographyFit:
    """Robust homography from flow-derived correspondences.

    Correspondences are sampled on a regular grid: (x, y) -> (x + u, y + v).
    The best of ``iterations`` random 4-point minimal DLT fits (degenerate,
    collinear samples are discarded but still consume budget) is refined by
    a trimmed least-squares refit on its inliers. A point is an inlier iff
    its reprojection error under the returned H is below ``threshold_px``.
    Deterministic for a fixed seed.
    """
    params = params or RansacParams()
    ys = np.arange(0, flow.height, params.grid_stride)
    xs = np.arange(0, flow.width, params.grid_stride)
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    src = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    vec = flow.vectors[gy.ravel(), gx.ravel()]
    dst = src + vec
    n = len(src)
    if n < 4:
        raise ValidationError(f"need at least 4 correspondences, got {n}")

    # uniform 4-subsets: the 4 smallest of n iid random keys per iteration
    rng = np.random.default_rng(seed)
    keys = rng.random((params.iterations, n))
    idx = np.argpartition(keys, 4, axis=1)[:, :4]

    degenerate = _any_collinear(src[idx]) | _any_collinear(dst[idx])
    if degenerate.all():
        raise ValidationError("all minimal samples degenerate (collinear points)")

    valid = ~degenerate
    H_cand = _dlt_batch(src[idx[valid]], dst[idx[valid]])
    finite = np.isfinite(H_cand).all(axis=(1, 2))
    if not finite.any():
        raise ValidationError("all minimal samples degenerate (singular fits)")
    H_cand = H_cand[finite]

    errors = _reprojection_errors(H_cand, src, dst)
    counts = (errors < params.threshold_px).sum(axis=1)
    best = int(np.argmax(counts))
    best_mask = errors[best] < params.threshold_px

    if best_mask.sum() >= 4:
        H = _refit_trimmed(src, dst, best_mask, params.threshold_px)
    else:
        H = H_cand[best]

    final_err = _reprojection_errors(H, src, dst)
    final_mask = final_err < params.threshold_px
    if abs(H[2, 2]) > 1e-9:
        H = H / H[2, 2]
    return HomographyFit(H, float(final_mask.mean()), final_mask)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------

def mean_motion_magnitude(flow: FlowField) -> float:
    """Arithmetic mean of per-pixel sqrt(u^2 + v^2)."""
    return float(np.hypot(flow.u, flow.v).mean())


def classify_pair_motion(
    fit: HomographyFit, m: float, r_min: float = 0.5, m_min: float = 1.0
) -> bool:
    """A pair shows camera movement iff r >= r_min and m >= m_min (inclusive)."""
    return bool(fit.inlier_ratio >= r_min and m >= m_min)


def classify_clip_static(
    clip: VideoClip, params: MotionParams | None = None
) -> MotionVerdict:
    """Classify a clip as static-camera from its consecutive sampled pairs.

    Frames are sampled at ``params.sample_fps``; each consecutive pair gets
    a flow field, a homography fit, and a mean magnitude. The clip is static
    iff no pair moves; a clip with a single sampled frame is static.
    """
    params = params or MotionParams()
    indices = sample_at_fps(clip, as_fraction(params.sample_fps))
    pairs = list(zip(indices[:-1], indices[1:]))
    moving, ratios, mags = [], [], []
    for i, (ia, ib) in enumerate(pairs):
        flow = compute_flow(clip.frames[ia], clip.frames[ib], params.flow)
        fit = estimate_homography_ransac(flow, params.ransac, seed=params.seed + i)
        m = mean_motion_magnitude(flow)
        moving.append(classify_pair_motion(fit, m, params.r_min, params.m_min))
        ratios.append(fit.inlier_ratio)
        mags.append(m)
    return MotionVerdict(
        pair_indices=tuple(pairs),
        pair_moving=tuple(moving),
        inlier_ratio=tuple(ratios),
        mean_magnitude=tuple(mags),
        clip_static=not any(moving),
    )
