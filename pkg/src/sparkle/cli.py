"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 worker failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ValidationError, WorkerError

log = logging.getLogger("sparkle")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_WORKER = 3


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", "-c", required=True, help="pipeline config (INI)")


def _parse_stages(text: str) -> list[int]:
    text = text.strip()
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            stages = list(range(int(lo), int(hi) + 1))
        else:
            stages = [int(s) for s in text.split(",")]
    except ValueError:
        raise ValidationError(f"cannot parse stage selection {text!r}")
    if not stages or any(s not in range(1, 6) for s in stages):
        raise ValidationError(f"stages must be within 1-5, got {text!r}")
    return stages


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparkle",
        description="Background replacement data pipeline and benchmark tools",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("filter-static", help="run the stage-1 static-camera filter")
    p.add_argument("manifest")
    _add_config(p)

    p = sub.add_parser("synthesize", help="run pipeline stages over a manifest")
    p.add_argument("manifest")
    _add_config(p)
    p.add_argument("--stages", default="1-5", help="e.g. 2-5 or 3 or 1,4")

    p = sub.add_parser("fuse-masks", help="anchor-voted foreground tracking for one clip")
    p.add_argument("clip", help="clip path (png-dir or .y4m)")
    _add_config(p)
    p.add_argument("--labels", nargs="+", required=True)
    p.add_argument("--clip-id", default="")
    p.add_argument("--out", default="mask_out", help="output mask directory")

    p = sub.add_parser("compose-guidance", help="compose decoupled edge guidance")
    p.add_argument("src", help="source clip")
    p.add_argument("bg", help="background clip")
    p.add_argument("mask", help="mask video directory")
    p.add_argument("--out", default="guidance_out")
    p.add_argument("--low", type=float, default=0.1)
    p.add_argument("--high", type=float, default=0.2)
    p.add_argument("--dilation", type=int, default=0)

    p = sub.add_parser("gate", help="run a score gate and print the verdict")
    p.add_argument("src", help="source clip or frame")
    p.add_argument("edited", help="edited clip or frame")
    _add_config(p)
    p.add_argument(
        "--rule",
        required=True,
        choices=["source", "first-frame", "removal", "final"],
    )
    p.add_argument("--prompt", default="")
    p.add_argument("--clip-id", default="")

    p = sub.add_parser("evaluate", help="score judged benchmark records")
    p.add_argument("records", help="JSONL of judge responses")
    p.add_argument("--protocol", choices=["sparkle6", "openve3"], default="sparkle6")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument(
        "--group-by",
        choices=["model", "model-theme", "model-subtheme"],
        default="model",
    )
    p.add_argument("--out", help="directory for the table and figure files")

    p = sub.add_parser("stats", help="manifest statistics report")
    p.add_argument("manifest")
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.add_argument("--out", help="directory for the table and figure files")

    return parser


# ---------------------------------------------------------------------------
# Command handlers
# ---------------------------------------------------------------------------

def _cmd_filter_static(args) -> int:
    from .pipeline import load_config, run_pipeline

    config = load_config(args.config)
    report = run_pipeline(args.manifest, config, stages=[1])
    print(
        f"stage 1 complete: {report.rejections_per_stage.get('1', 0)} rejected, "
        f"{report.failures_per_stage.get('1', 0)} failed, "
        f"{report.stage_yield['1']['passed']} static"
    )
    return EXIT_WORKER if report.failed else EXIT_OK


def _cmd_synthesize(args) -> int:
    from .pipeline import load_config, run_pipeline

    config = load_config(args.config)
    stages = _parse_stages(args.stages)
    report = run_pipeline(args.manifest, config, stages=stages)
    print(
        f"pipeline: {report.accepted} accepted, {report.rejected} rejected, "
        f"{report.failed} failed, {report.pending} pending of {report.total}"
    )
    return EXIT_WORKER if report.failed else EXIT_OK


def _cmd_fuse_masks(args) -> int:
    from .fusion import run_bait, save_diagnostics
    from .masks import save_mask_video
    from .media import load_clip
    from .pipeline import build_workers, load_config

    config = load_config(args.config)
    workers = build_workers(config)
    clip = load_clip(args.clip)
    result = run_bait(
        clip,
        args.labels,
        workers,
        workers,
        clip_id=args.clip_id,
        sample_fps=config.motion.sample_fps,
    )
    out = Path(args.out)
    save_mask_video(result.consensus, out)
    save_diagnostics(result, out / "diagnostics.json")
    print(
        f"fused {result.n_anchors} passes -> {out} "
        f"(disagreement {[f'{d:.4f}' for d in result.per_pass_disagreement]})"
    )
    return EXIT_OK


def _cmd_compose_guidance(args) -> int:
    from .guidance import canny_edges, compose_guidance, save_guidance
    from .masks import load_mask_video
    from .media import load_clip

    src = load_clip(args.src)
    bg = load_clip(args.bg)
    mask = load_mask_video(args.mask)
    src_edges = [canny_edges(f, args.low, args.high) for f in src.frames]
    bg_edges = [canny_edges(f, args.low, args.high) for f in bg.frames]
    gv = compose_guidance(src_edges, bg_edges, mask, args.dilation)
    save_guidance(gv, args.out)
    print(f"composed {gv.n_frames} guidance frames -> {args.out}")
    return EXIT_OK


def _cmd_gate(args) -> int:
    from .gates import (
        RULE_FIRST_FRAME,
        RULE_REMOVAL,
        gate_final_video,
        gate_first_frame,
        gate_source,
    )
    from .media import load_clip, load_frame
    from .pipeline import build_workers, load_config

    config = load_config(args.config)
    workers = build_workers(config)
    if args.rule in ("first-frame", "removal"):
        before = load_frame(args.src)
        after = load_frame(args.edited)
        rule = RULE_FIRST_FRAME if args.rule == "first-frame" else RULE_REMOVAL
        threshold = (
            config.thresholds.first_frame
            if args.rule == "first-frame"
            else config.thresholds.removal
        )
        result = gate_first_frame(
            before, after, args.prompt, workers, threshold,
            rule=rule, clip_id=args.clip_id,
        )
    else:
        src = load_clip(args.src)
        edited = load_clip(args.edited)
        if args.rule == "source":
            result = gate_source(
                src, edited, args.prompt, workers,
                threshold=config.thresholds.source, clip_id=args.clip_id,
            )
        else:
            result = gate_final_video(
                src, edited, args.prompt, workers,
                threshold=config.thresholds.final,
                n_samples=config.final_gate_frames,
                clip_id=args.clip_id,
            )
    print(json.dumps(result.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    from .bench import aggregate, get_protocol, load_eval_records, render_table

    protocol = get_protocol(args.protocol)
    records = load_eval_records(args.records, protocol)
    rows = aggregate(records, group_by=args.group_by)
    table = render_table(rows, args.format)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = "csv" if args.format == "csv" else "md"
        table_path = out / f"scores.{ext}"
        table_path.write_text(table)
        from .figures import render_eval_figure

        fig_path = render_eval_figure(rows, out / "scores.png")
        print(f"wrote {table_path} and {fig_path}")
    else:
        print(table, end="")
    return EXIT_OK


def _cmd_stats(args) -> int:
    from .pipeline import compute_stats, render_stats_table

    report = compute_stats(args.manifest)
    table = render_stats_table(report, args.format)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ext = "csv" if args.format == "csv" else "md"
        table_path = out / f"stats.{ext}"
        table_path.write_text(table)
        from .figures import render_stats_figure

        fig_path = render_stats_figure(report, out / "stats.png")
        print(f"wrote {table_path} and {fig_path}")
    else:
        print(table, end="")
    return EXIT_OK


_HANDLERS = {
    "filter-static": _cmd_filter_static,
    "synthesize": _cmd_synthesize,
    "fuse-masks": _cmd_fuse_masks,
    "compose-guidance": _cmd_compose_guidance,
    "gate": _cmd_gate,
    "evaluate": _cmd_evaluate,
    "stats": _cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _HANDLERS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except WorkerError as exc:
        print(f"worker error: {exc}", file=sys.stderr)
        return EXIT_WORKER


if __name__ == "__main__":
    sys.exit(main())
