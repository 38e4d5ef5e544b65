"""Anchor-voted foreground tracking (BAIT).

Foreground boxes are grounded on sparsely sampled frames; every anchor
frame seeds one forward-plus-backward tracking pass; the passes are fused
by a strict per-pixel majority vote. A pixel is foreground only when more
than half of the passes agree, so dropouts and spurious blobs confined to
single passes vanish from the consensus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .masks import MaskVideo
from .media import VideoClip, sample_at_fps
from .workers import BACKWARD, FORWARD


@dataclass(frozen=True)
class AnchorFrame:
    """One sampled frame with at least one grounded box."""

    frame_index: int
    boxes: tuple

    def __post_init__(self):
        if not self.boxes:
            raise ValidationError("anchor frame must carry at least one box")


@dataclass(frozen=True)
class AnchorSet:
    """The anchor frames of a clip; ``n_anchors`` passes will be tracked."""

    anchor_frames: tuple

    def __post_init__(self):
        if not self.anchor_frames:
            raise ValidationError("anchor set must not be empty")

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_frames)


@dataclass(frozen=True, eq=False)
class BaitResult:
    consensus: MaskVideo
    n_anchors: int
    per_pass_disagreement: tuple


def collect_anchors(
    clip: VideoClip,
    labels: list[str],
    grounder,
    *,
    clip_id: str = "",
    sample_fps=2,
) -> AnchorSet:
    """Ground every sampled frame; frames without detections are dropped.

    Raises when no sampled frame yields a detection at all.
    """
    if not labels:
        raise ValidationError("foreground labels must be non-empty")
    anchor_frames = []
    for idx in sample_at_fps(clip, sample_fps):
        boxes = grounder.ground(
            clip.frames[idx], labels, frame_index=idx, clip_id=clip_id
        )
        if boxes:
            anchor_frames.append(AnchorFrame(idx, tuple(boxes)))
    if not anchor_frames:
        raise ValidationError("foreground never detected on any sampled frame")
    return AnchorSet(tuple(anchor_frames))


def track_from_anchor(
    clip: VideoClip, anchor: AnchorFrame, tracker, *, clip_id: str = ""
) -> MaskVideo:
    """One pass: forward and backward from the anchor, unioned per frame.

    Multiple boxes on the anchor frame are unioned too, so each anchor
    frame contributes exactly one vote.
    """
    acc = np.zeros((clip.n_frames, clip.height, clip.width), dtype=bool)
    for box in anchor.boxes:
        for direction in (FORWARD, BACKWARD):
            mv = tracker.propagate_mask(clip, box, direction, clip_id=clip_id)
            acc |= mv.masks
    return MaskVideo(acc)


def vote_masks(passes: list[MaskVideo]) -> MaskVideo:
    """Strict per-pixel majority over N passes.

    A pixel is foreground iff strictly more than N/2 passes mark it
    foreground; an exact tie (even N) is background.
    """
    if not passes:
        raise ValidationError("vote needs at least one mask video")
    shape = passes[0].masks.shape
    for i, p in enumerate(passes):
        if p.masks.shape != shape:
            raise ValidationError(
                f"mask stack mismatch: pass {i} is {p.masks.shape}, expected {shape}"
            )
    stack = np.stack([p.masks for p in passes])
    counts = stack.sum(axis=0, dtype=np.int64)
    return MaskVideo(2 * counts > len(passes))


def run_bait(
    clip: VideoClip,
    labels: list[str],
    grounder,
    tracker,
    *,
    clip_id: str = "",
    sample_fps=2,
) -> BaitResult:
    """Full anchor-vote pipeline: ground, track one pass per anchor, vote.

    The per-pass disagreement rate against the consensus is reported as a
    diagnostic; a pass that drops frames or hallucinates blobs stands out.
    """
    anchors = collect_anchors(
        clip, labels, grounder, clip_id=clip_id, sample_fps=sample_fps
    )
    passes = [
        track_from_anchor(clip, anchor, tracker, clip_id=clip_id)
        for anchor in anchors.anchor_frames
    ]
    consensus = vote_masks(passes)
    disagreement = tuple(
        float(np.mean(p.masks != consensus.masks)) for p in passes
    )
    return BaitResult(
        consensus=consensus,
        n_anchors=anchors.n_anchors,
        per_pass_disagreement=disagreement,
    )


def save_diagnostics(result: BaitResult, path) -> None:
    payload = {
        "n_anchors": result.n_anchors,
        "per_pass_disagreement": list(result.per_pass_disagreement),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
