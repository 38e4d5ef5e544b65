"""Score-threshold gates applied after every content-modifying step.

All thresholds are inclusive: a score exactly at the threshold passes.
Clip-level rules average paired per-frame scores; single-frame rules use
one score. The final-video rule samples four frames evenly while never
scoring frame 0, which was already gated when the first frame was edited.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ValidationError
from .media import Frame, VideoClip, sample_at_fps, uniform_sample_excluding_first

RULE_SOURCE = "source-2fps"
RULE_FIRST_FRAME = "first-frame"
RULE_REMOVAL = "removal"
RULE_FINAL = "final-4frame"

_SINGLE_FRAME_RULES = (RULE_FIRST_FRAME, RULE_REMOVAL)

# worker request tag per rule, so fixtures can script each gate separately
_RULE_TAGS = {
    RULE_SOURCE: "source",
    RULE_FIRST_FRAME: "edit",
    RULE_REMOVAL: "removal",
    RULE_FINAL: "final",
}


@dataclass(frozen=True)
class GateResult:
    accepted: bool
    mean_score: float
    frame_scores: tuple
    threshold: float
    rule: str

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "mean_score": self.mean_score,
            "frame_scores": [[i, s] for i, s in self.frame_scores],
            "threshold": self.threshold,
            "rule": self.rule,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GateResult":
        return cls(
            accepted=bool(d["accepted"]),
            mean_score=float(d["mean_score"]),
            frame_scores=tuple((int(i), float(s)) for i, s in d["frame_scores"]),
            threshold=float(d["threshold"]),
            rule=str(d["rule"]),
        )


def _check_threshold(threshold: float) -> float:
    if not (0.0 <= threshold <= 10.0):
        raise ValidationError(f"threshold must be in [0, 10], got {threshold}")
    return float(threshold)


def _verdict(frame_scores: list, threshold: float, rule: str) -> GateResult:
    mean = sum(s for _, s in frame_scores) / len(frame_scores)
    return GateResult(
        accepted=mean >= threshold,
        mean_score=mean,
        frame_scores=tuple(frame_scores),
        threshold=threshold,
        rule=rule,
    )


def gate_source(
    src: VideoClip,
    edited: VideoClip,
    prompt: str,
    scorer,
    *,
    threshold: float = 8.0,
    sample_fps=2,
    clip_id: str = "",
) -> GateResult:
    """Average score of index-matched (source, edited) frame pairs sampled
    at 2 FPS; accepted iff the mean reaches the threshold."""
    _check_threshold(threshold)
    if src.n_frames != edited.n_frames:
        raise ValidationError(
            f"clips must align frame-for-frame: {src.n_frames} vs {edited.n_frames}"
        )
    scores = []
    for idx in sample_at_fps(src, sample_fps):
        report = scorer.score_edit(
            src.frames[idx],
            edited.frames[idx],
            prompt,
            clip_id=clip_id,
            tag=_RULE_TAGS[RULE_SOURCE],
            frame_index=idx,
        )
        scores.append((idx, report.overall))
    return _verdict(scores, threshold, RULE_SOURCE)


def gate_first_frame(
    before: Frame,
    after: Frame,
    prompt: str,
    scorer,
    threshold: float,
    *,
    rule: str = RULE_FIRST_FRAME,
    clip_id: str = "",
) -> GateResult:
    """Single-frame gate used for the first-frame edit (threshold 8.0) and
    the stricter foreground-removal check (threshold 8.5)."""
    _check_threshold(threshold)
    if rule not in _SINGLE_FRAME_RULES:
        raise ValidationError(f"rule must be one of {_SINGLE_FRAME_RULES}, got {rule!r}")
    report = scorer.score_edit(
        before, after, prompt, clip_id=clip_id, tag=_RULE_TAGS[rule], frame_index=0
    )
    return _verdict([(0, report.overall)], threshold, rule)


def gate_final_video(
    src: VideoClip,
    edited: VideoClip,
    prompt: str,
    scorer,
    *,
    threshold: float = 8.0,
    n_samples: int = 4,
    clip_id: str = "",
) -> GateResult:
    """Average score over frames sampled evenly from (0, n-1]; frame 0 is
    never scored here."""
    _check_threshold(threshold)
    if edited.n_frames < 2:
        raise ValidationError(
            f"final gate needs at least 2 frames, got {edited.n_frames}"
        )
    indices = uniform_sample_excluding_first(edited.n_frames, n_samples)
    if indices[-1] >= src.n_frames:
        raise ValidationError(
            f"source clip too short: needs frame {indices[-1]}, has {src.n_frames}"
        )
    scores = []
    for idx in indices:
        report = scorer.score_edit(
            src.frames[idx],
            edited.frames[idx],
            prompt,
            clip_id=clip_id,
            tag=_RULE_TAGS[RULE_FINAL],
            frame_index=idx,
        )
        scores.append((idx, report.overall))
    return _verdict(scores, threshold, RULE_FINAL)
