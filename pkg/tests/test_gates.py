from __future__ import annotations

import numpy as np
import pytest

from sparkle.errors import ValidationError
from sparkle.gates import (
    RULE_FINAL,
    RULE_FIRST_FRAME,
    RULE_REMOVAL,
    RULE_SOURCE,
    gate_final_video,
    gate_first_frame,
    gate_source,
)
from sparkle.media import Frame, VideoClip, uniform_sample_excluding_first
from sparkle.workers import MockWorkers, score_id


def flat_clip(n, fps=8):
    return VideoClip([Frame(np.full((4, 4, 3), 60, np.uint8))] * n, fps)


FRAME = Frame(np.full((4, 4, 3), 60, np.uint8))


def scorer_for(tag, scores_by_index):
    return MockWorkers(
        {score_id("c", tag, i): {"overall": s} for i, s in scores_by_index.items()}
    )


class TestGateSource:
    def test_mean_above_threshold_accepted(self):
        # 9 frames at 8 fps sampled at 2 fps -> frames 0, 4, 8
        clip = flat_clip(9)
        scorer = scorer_for("source", {0: 8.5, 4: 8.0, 8: 7.6})
        result = gate_source(clip, clip, "p", scorer, clip_id="c")
        assert result.accepted
        assert result.mean_score == pytest.approx(8.0333333, abs=1e-6)
        assert result.rule == RULE_SOURCE
        assert [i for i, _ in result.frame_scores] == [0, 4, 8]

    def test_mean_below_threshold_rejected(self):
        clip = flat_clip(5)  # sampled frames 0 and 4
        scorer = scorer_for("source", {0: 8.0, 4: 7.9})
        result = gate_source(clip, clip, "p", scorer, clip_id="c")
        assert not result.accepted
        assert result.mean_score == pytest.approx(7.95)

    def test_single_frame_exactly_at_threshold(self):
        clip = flat_clip(1)
        scorer = scorer_for("source", {0: 8.0})
        assert gate_source(clip, clip, "p", scorer, clip_id="c").accepted

    def test_misaligned_clips_rejected(self):
        scorer = scorer_for("source", {0: 8.0})
        with pytest.raises(ValidationError, match="frame-for-frame"):
            gate_source(flat_clip(3), flat_clip(4), "p", scorer, clip_id="c")


class TestGateFirstFrame:
    def test_exactly_at_threshold_accepted(self):
        scorer = scorer_for("edit", {0: 8.0})
        result = gate_first_frame(FRAME, FRAME, "p", scorer, 8.0, clip_id="c")
        assert result.accepted
        assert result.rule == RULE_FIRST_FRAME

    def test_removal_below_stricter_threshold_rejected(self):
        scorer = scorer_for("removal", {0: 8.4})
        result = gate_first_frame(
            FRAME, FRAME, "p", scorer, 8.5, rule=RULE_REMOVAL, clip_id="c"
        )
        assert not result.accepted
        assert result.rule == RULE_REMOVAL

    def test_high_score_accepted(self):
        scorer = scorer_for("removal", {0: 9.9})
        assert gate_first_frame(
            FRAME, FRAME, "p", scorer, 8.5, rule=RULE_REMOVAL, clip_id="c"
        ).accepted

    def test_removal_exactly_at_stricter_threshold(self):
        scorer = scorer_for("removal", {0: 8.5})
        assert gate_first_frame(
            FRAME, FRAME, "p", scorer, 8.5, rule=RULE_REMOVAL, clip_id="c"
        ).accepted

    def test_bad_threshold(self):
        with pytest.raises(ValidationError):
            gate_first_frame(FRAME, FRAME, "p", MockWorkers({}), 10.5, clip_id="c")


class TestGateFinalVideo:
    def test_81_frame_example(self):
        clip = flat_clip(81)
        scorer = scorer_for("final", {20: 8.5, 40: 8.0, 60: 7.5, 80: 8.4})
        result = gate_final_video(clip, clip, "p", scorer, clip_id="c")
        assert result.accepted
        assert result.mean_score == pytest.approx(8.1)
        assert [i for i, _ in result.frame_scores] == [20, 40, 60, 80]
        assert result.rule == RULE_FINAL

    def test_below_threshold_rejected(self):
        clip = flat_clip(81)
        scorer = scorer_for("final", {20: 7.0, 40: 8.0, 60: 8.0, 80: 8.0})
        result = gate_final_video(clip, clip, "p", scorer, clip_id="c")
        assert not result.accepted
        assert result.mean_score == pytest.approx(7.75)

    def test_five_frame_clip_scores_frames_1_to_4(self):
        clip = flat_clip(5)
        scorer = scorer_for("final", {1: 8.0, 2: 8.0, 3: 8.0, 4: 8.0})
        result = gate_final_video(clip, clip, "p", scorer, clip_id="c")
        assert [i for i, _ in result.frame_scores] == [1, 2, 3, 4]

    def test_frame_zero_never_scored(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 120))
            clip = flat_clip(n)
            indices = uniform_sample_excluding_first(n, 4)
            scorer = scorer_for("final", {i: 8.0 for i in indices})
            result = gate_final_video(clip, clip, "p", scorer, clip_id="c")
            assert all(i != 0 for i, _ in result.frame_scores)

    def test_too_short(self):
        with pytest.raises(ValidationError, match="at least 2"):
            gate_final_video(flat_clip(1), flat_clip(1), "p", MockWorkers({}), clip_id="c")


class TestGateProperties:
    def test_monotone_in_every_frame_score(self, rng):
        clip = flat_clip(9)  # sampled frames 0, 4, 8
        for _ in range(300):
            scores = {i: float(rng.uniform(0, 10)) for i in (0, 4, 8)}
            base = gate_source(clip, clip, "p", scorer_for("source", scores), clip_id="c")
            bump = int(rng.choice([0, 4, 8]))
            raised = dict(scores)
            raised[bump] = min(10.0, raised[bump] + float(rng.uniform(0, 2)))
            after = gate_source(clip, clip, "p", scorer_for("source", raised), clip_id="c")
            if base.accepted:
                assert after.accepted

    def test_mean_recomputes_from_frame_scores(self, rng):
        clip = flat_clip(9)
        scores = {i: float(rng.uniform(0, 10)) for i in (0, 4, 8)}
        result = gate_source(clip, clip, "p", scorer_for("source", scores), clip_id="c")
        recomputed = sum(s for _, s in result.frame_scores) / len(result.frame_scores)
        assert abs(recomputed - result.mean_score) < 1e-12

    def test_boundary_exactness(self):
        # thresholds are inclusive at exact equality for every rule
        clip = flat_clip(1)
        assert gate_source(
            clip, clip, "p", scorer_for("source", {0: 8.0}), clip_id="c"
        ).accepted
        assert not gate_source(
            clip, clip, "p", scorer_for("source", {0: 7.999999}), clip_id="c"
        ).accepted

    def test_gate_result_dict_round_trip(self):
        from sparkle.gates import GateResult

        clip = flat_clip(5)
        scorer = scorer_for("final", {1: 8.1, 2: 8.2, 3: 8.3, 4: 8.4})
        result = gate_final_video(clip, clip, "p", scorer, clip_id="c")
        assert GateResult.from_dict(result.to_dict()) == result
