from __future__ import annotations

import json

import numpy as np
import pytest

from sparkle.bench import SPARKLE6
from sparkle.cli import main
from sparkle.manifest import load_manifest, save_manifest
from sparkle.masks import load_mask_video, save_mask_video, MaskVideo
from sparkle.media import write_clip
from sparkle.synthetic import static_clip_with_moving_block
from sparkle.taxonomy import benchmark_records
from tests.scripted import build_pipeline_env
from tests.test_bench import records_with_dimension_means, response_text


@pytest.fixture
def judged_jsonl(tmp_path):
    records = records_with_dimension_means(
        (4.10, 3.40, 3.77, 4.05, 3.54, 3.99), SPARKLE6
    )
    lines = [
        json.dumps(
            {
                "video_id": r.video_id,
                "theme": r.theme,
                "subtheme": r.subtheme,
                "scene": r.scene,
                "model": r.model,
                "judge_response_text": response_text(r.scores),
            }
        )
        for r in records
    ]
    path = tmp_path / "judged.jsonl"
    path.write_text("\n".join(lines) + "\n")
    return path


class TestSynthesize:
    def test_full_run_and_stats(self, tmp_path, capsys):
        env = build_pipeline_env(tmp_path)
        assert main(["synthesize", str(env.manifest_path), "-c", str(env.config_path)]) == 0
        out = capsys.readouterr().out
        assert "1 accepted" in out and "3 rejected" in out

        outdir = tmp_path / "report"
        assert main(["stats", str(env.manifest_path), "--out", str(outdir)]) == 0
        assert (outdir / "stats.md").exists()
        assert (outdir / "stats.png").exists()

    def test_stage_subset(self, tmp_path):
        env = build_pipeline_env(tmp_path)
        assert main(["synthesize", str(env.manifest_path), "-c", str(env.config_path),
                     "--stages", "1"]) == 0
        records = {r.clip_id: r for r in load_manifest(env.manifest_path)}
        assert records["clip-a"].status(1) == "done"
        assert records["clip-a"].status(2) == "pending"

    def test_filter_static(self, tmp_path, capsys):
        env = build_pipeline_env(tmp_path)
        assert main(["filter-static", str(env.manifest_path), "-c", str(env.config_path)]) == 0
        assert "1 rejected" in capsys.readouterr().out

    def test_worker_failure_exit_code(self, tmp_path):
        env = build_pipeline_env(tmp_path)
        fixture = json.loads(env.fixture_path.read_text())
        del fixture["responses"]["animate:clip-a:final:8"]
        env.fixture_path.write_text(json.dumps(fixture))
        assert main(["synthesize", str(env.manifest_path), "-c", str(env.config_path)]) == 3

    def test_validation_error_exit_code(self, tmp_path):
        env = build_pipeline_env(tmp_path)
        assert main(["synthesize", str(tmp_path / "missing.jsonl"),
                     "-c", str(env.config_path)]) == 2

    def test_bad_stage_selection(self, tmp_path):
        env = build_pipeline_env(tmp_path)
        assert main(["synthesize", str(env.manifest_path), "-c", str(env.config_path),
                     "--stages", "7"]) == 2


class TestFuseMasks:
    def test_writes_mask_and_diagnostics(self, tmp_path, capsys):
        env = build_pipeline_env(tmp_path)
        out = tmp_path / "mask_out"
        code = main([
            "fuse-masks", str(env.root / "clips" / "clip-a"),
            "-c", str(env.config_path),
            "--labels", "red block", "--clip-id", "clip-a",
            "--out", str(out),
        ])
        assert code == 0
        mv = load_mask_video(out)
        assert mv.n_frames == 8
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["n_anchors"] == 2
        assert len(diag["per_pass_disagreement"]) == 2


class TestComposeGuidance:
    def test_end_to_end(self, tmp_path):
        clip = static_clip_with_moving_block(seed=4, n_frames=3, size=16, fps=2)
        src_path = tmp_path / "src"
        write_clip(clip, src_path)
        bg_path = tmp_path / "bg"
        write_clip(static_clip_with_moving_block(seed=5, n_frames=3, size=16, fps=2), bg_path)
        mask = MaskVideo(np.zeros((3, 16, 16), bool))
        mask.masks[:, 4:9, 4:9] = True
        mask_path = tmp_path / "mask"
        save_mask_video(mask, mask_path)
        out = tmp_path / "guidance"
        code = main([
            "compose-guidance", str(src_path), str(bg_path), str(mask_path),
            "--out", str(out),
        ])
        assert code == 0
        assert (out / "provenance.json").exists()
        assert len(list(out.glob("0000*.png"))) == 3


class TestGateCommand:
    def test_final_rule(self, tmp_path, capsys):
        env = build_pipeline_env(tmp_path)
        clip_path = env.root / "clips" / "clip-a"
        code = main([
            "gate", str(clip_path), str(clip_path),
            "-c", str(env.config_path),
            "--rule", "final", "--prompt", "p", "--clip-id", "clip-a",
        ])
        assert code == 0
        verdict = json.loads(capsys.readouterr().out)
        assert verdict["rule"] == "final-4frame"
        assert verdict["accepted"] is True
        assert [fs[0] for fs in verdict["frame_scores"]] == [2, 4, 5, 7]

    def test_first_frame_rule_on_pngs(self, tmp_path, capsys):
        env = build_pipeline_env(tmp_path)
        frame_png = env.root / "clips" / "clip-c" / "000000.png"
        code = main([
            "gate", str(frame_png), str(frame_png),
            "-c", str(env.config_path),
            "--rule", "first-frame", "--prompt", "p", "--clip-id", "clip-c",
        ])
        assert code == 0
        verdict = json.loads(capsys.readouterr().out)
        assert verdict["accepted"] is False  # scripted 7.9 < 8.0


class TestEvaluate:
    def test_markdown_to_stdout(self, judged_jsonl, capsys):
        assert main(["evaluate", str(judged_jsonl), "--protocol", "sparkle6"]) == 0
        out = capsys.readouterr().out
        assert "| Model | Overall |" in out
        assert "3.81" in out

    def test_csv_with_figure(self, judged_jsonl, tmp_path, capsys):
        outdir = tmp_path / "eval"
        code = main([
            "evaluate", str(judged_jsonl), "--protocol", "sparkle6",
            "--format", "csv", "--out", str(outdir),
        ])
        assert code == 0
        table = (outdir / "scores.csv").read_text()
        assert table.splitlines()[0] == "model,overall,ins,vis,fgin,fgmo,bgdy,bgvi"
        assert "subject,3.81,4.10,3.40,3.77,4.05,3.54,3.99" in table
        assert (outdir / "scores.png").stat().st_size > 0

    def test_malformed_records_exit_validation(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"video_id": "v", "model": "m", "judge_response_text": "nope"}\n')
        assert main(["evaluate", str(bad)]) == 2


class TestStatsCommand:
    def test_benchmark_table(self, tmp_path, capsys):
        path = tmp_path / "bench.jsonl"
        save_manifest(benchmark_records(), path)
        assert main(["stats", str(path), "--format", "csv"]) == 0
        out = capsys.readouterr().out
        assert "Location,6,27,4,108" in out
        assert "Total,21,97,-,458" in out
