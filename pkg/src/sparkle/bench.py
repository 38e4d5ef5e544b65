"""Benchmark scoring: judge prompts, response parsing, cap enforcement,
aggregation, and table rendering.

Two protocols are supported. ``sparkle6`` rates six dimensions on a 1-5
scale; ``openve3`` rates three. In both, every other dimension is capped
at the Instruction Compliance score so visual polish cannot outrun
instruction following. A row's Overall is the unweighted mean of its
dimension means, rounded half-up to two decimals at presentation.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .errors import ValidationError

INSTRUCTION_COMPLIANCE = "Instruction Compliance"

_ABBREV = {
    "Instruction Compliance": "Ins",
    "Overall Visual Quality": "Vis",
    "Foreground Integrity": "FgIn",
    "Foreground Motion Consistency": "FgMo",
    "Background Dynamics": "BgDy",
    "Background Visual Quality": "BgVi",
    "Consistency & Detail Fidelity": "Cons",
    "Visual Quality & Stability": "VQ",
}


@dataclass(frozen=True)
class Protocol:
    name: str
    dimensions: tuple
    cap_anchor: str

    def __post_init__(self):
        if self.cap_anchor not in self.dimensions:
            raise ValidationError("cap anchor must be one of the dimensions")


SPARKLE6 = Protocol(
    name="sparkle6",
    dimensions=(
        "Instruction Compliance",
        "Overall Visual Quality",
        "Foreground Integrity",
        "Foreground Motion Consistency",
        "Background Dynamics",
        "Background Visual Quality",
    ),
    cap_anchor=INSTRUCTION_COMPLIANCE,
)

OPENVE3 = Protocol(
    name="openve3",
    dimensions=(
        "Instruction Compliance",
        "Consistency & Detail Fidelity",
        "Visual Quality & Stability",
    ),
    cap_anchor=INSTRUCTION_COMPLIANCE,
)

PROTOCOLS = {p.name: p for p in (SPARKLE6, OPENVE3)}


def get_protocol(name: str) -> Protocol:
    try:
        return PROTOCOLS[name]
    except KeyError:
        raise ValidationError(
            f"unknown protocol {name!r}; choose from {sorted(PROTOCOLS)}"
        )


@dataclass(frozen=True)
class DimScores:
    """Integer 1-5 score per dimension plus the judge's brief reasoning."""

    scores: dict
    reasoning: str = ""

    def __post_init__(self):
        for dim, value in self.scores.items():
            if not (1 <= value <= 5):
                raise ValidationError(f"{dim} score out of range: {value}")

    def get(self, dim: str) -> int:
        return self.scores[dim]


@dataclass(frozen=True)
class EvalRecord:
    video_id: str
    theme: str
    subtheme: str
    scene: str
    model: str
    protocol: str
    scores: DimScores

    @property
    def overall(self) -> float:
        dims = get_protocol(self.protocol).dimensions
        mean = sum(self.scores.get(d) for d in dims) / len(dims)
        return round2(mean)


def round2(x: float) -> float:
    """Round half-up to two decimals (presentation rounding)."""
    return float(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def fmt2(x: float) -> str:
    return str(Decimal(repr(x)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# Judge prompt construction
# ---------------------------------------------------------------------------

SPARKLE6_PROMPT_TEMPLATE = """\
You are a data rater specializing in grading video background replacement. \
You will be given two videos (source and edited) and the editing instruction. \
Your task is to evaluate the result on a 5-point scale across six dimensions:

Instruction Compliance
1. No change, or background entirely unrelated to the prompt, or foreground also replaced/distorted such that the edit fails as a whole.
2. Background only partially matches prompt content or style; major requested elements wrong or missing; or foreground noticeably altered.
3. Main background concept matches but with missing/extra elements, wrong sub-style, or partial spill onto the subject.
4. Requested background fully present and consistent with the prompt; only minor mismatches in tone, detail, or atmosphere.
5. Background exactly matches the prompt in content, style, mood, and any specified dynamics; foreground untouched.

Overall Visual Quality. This dimension covers global image quality AND foreground-background harmonization. The lighting, color temperature, and shadows on the foreground must match the new background environment. For example, when the prompt changes the time of day (e.g. day to night, noon to sunset), keeping the original daytime lighting on the foreground while the background is dark is a major harmonization failure. The same applies to season, location, and style edits that imply different ambient light.
1. Severe artefacts throughout (tearing, posterisation, color banding, heavy flicker), OR foreground lighting is grossly inconsistent with the new background (e.g. brightly lit subject against a night scene, conflicting light directions, no shadow adaptation).
2. Clear visual degradation (persistent blur, noise, unstable colors), OR obvious lighting / color-temperature mismatch between foreground and background visible at first glance.
3. Watchable but with visible flaws on closer look: occasional flicker, mild compression artefacts, soft regions, OR partial harmonization where the foreground tone is in the right direction but not fully matched to the background.
4. Clean output with only minor issues when zoomed in or paused; foreground lighting and color grading are well aligned with the background, with only subtle discrepancies.
5. Indistinguishable from real captured footage: sharp, stable, well-graded across the entire clip, with foreground lighting, color temperature, and shadows fully harmonized with the new background environment.

Foreground Integrity
1. Foreground severely damaged: missing limbs/parts, large holes, replaced with a different subject, or shape collapsed.
2. Noticeable foreground damage: partial erosion by background, distorted contours, identity drift across frames.
3. Foreground mostly preserved but with visible defects: edge halos, slight shape deformation, occasional color bleed.
4. Foreground well preserved with only minute edge artefacts; shape and identity stable throughout.
5. Foreground perfectly preserved: every pixel of shape, texture, and identity intact across all frames.

Foreground Motion Consistency
1. Foreground motion completely different from source: actions replaced, frozen, looped, or temporally scrambled.
2. Major motion deviations: different gestures, dropped actions, or strong temporal jitter not present in source.
3. Same general action is recognizable but with timing drift, trajectory shifts, or inconsistent speed versus source.
4. Motion closely tracks the source with only minor temporal misalignment or subtle smoothing.
5. Foreground motion is identical to the source video in trajectory, timing, and articulation, frame by frame.

Background Dynamics (Liveness). This dimension measures whether the background motion matches the intensity and character implied by the prompt. The bar is appropriateness to the prompt, not absolute amount of motion. A "gentle swaying grass" prompt rendered as subtle wind-like sway is fully correct and should receive a high score; the same subtle motion for a "rushing waterfall" prompt is severely under-rendered.
1. Background motion contradicts the prompt: completely static when the prompt implies any motion, or wrong type/direction of motion (e.g. crashing waves rendered as a still pond).
2. Motion intensity is far below what the prompt implies (e.g. a "rushing river" rendered as barely moving water), or required dynamics are largely absent.
3. Motion type is in the right direction but noticeably under- or over-rendered, OR motion exists but feels stiff and unnatural.
4. Motion intensity and character are well matched to the prompt, with only minor stiffness, small frozen patches, or slight over/under rendering.
5. Background motion perfectly matches the prompt in both intensity and character, rendered naturally and continuously throughout the clip; gentle prompts receive gentle motion, energetic prompts receive energetic motion.
Special case: if the prompt explicitly asks for a static background (e.g. "still photo", "frozen scene", "no motion"), a faithfully static background scores 5 and any unwanted motion lowers the score accordingly.

Background Visual Quality
1. Background severely degraded: melting structures, broken geometry, heavy blur, or incoherent textures.
2. Clear distortion or blur in major background regions; structures wobble or warp over time.
3. Acceptable background with visible imperfections: soft textures, mild geometric inconsistency, minor temporal warping.
4. High-quality background with only minor issues on close inspection; geometry and textures stable.
5. Background is sharp, geometrically coherent, and temporally stable; on par with real footage.

Constraints. The scores for Overall Visual Quality, Foreground Integrity, Foreground Motion Consistency, Background Dynamics, and Background Visual Quality must not exceed the score for Instruction Compliance.

Example Response Format.
- Brief reasoning: No more than 30 words.
- Instruction Compliance: 1-5.
- Overall Visual Quality: 1-5.
- Foreground Integrity: 1-5.
- Foreground Motion Consistency: 1-5.
- Background Dynamics: 1-5.
- Background Visual Quality: 1-5.

Editing instruction is: {instruction}

Below are the videos before and after editing:
"""

OPENVE3_PROMPT_TEMPLATE = """\
You are a data rater specializing in grading instruction-guided video editing. \
You will be given two videos (source and edited) and the editing instruction. \
Your task is to evaluate the result on a 5-point scale across three dimensions:

Instruction Compliance
1-5: how faithfully the edit realizes the requested change, from no change or an unrelated result (1) to an edit matching the instruction exactly in content, style, and any specified dynamics (5).

Consistency & Detail Fidelity
1-5: how well unedited content and fine detail are preserved and stay temporally consistent with the source, from severe loss or drift (1) to frame-accurate preservation (5).

Visual Quality & Stability
1-5: the overall visual quality and temporal stability of the edited video, from severe artefacts or flicker (1) to footage indistinguishable from a real capture (5).

Constraints. The scores for Consistency & Detail Fidelity and Visual Quality & Stability must not exceed the score for Instruction Compliance.

Example Response Format.
- Brief reasoning: No more than 30 words.
- Instruction Compliance: 1-5.
- Consistency & Detail Fidelity: 1-5.
- Visual Quality & Stability: 1-5.

Editing instruction is: {instruction}

Below are the videos before and after editing:
"""

_TEMPLATES = {"sparkle6": SPARKLE6_PROMPT_TEMPLATE, "openve3": OPENVE3_PROMPT_TEMPLATE}


def build_judge_prompt(protocol: Protocol, instruction: str) -> str:
    """The full rating prompt for one video pair."""
    if not instruction:
        raise ValidationError("editing instruction must be non-empty")
    return _TEMPLATES[protocol.name].format(instruction=instruction)


# ---------------------------------------------------------------------------
# Response parsing and cap enforcement
# ---------------------------------------------------------------------------

_REASONING_RE = re.compile(
    r"^\s*[-*•]?\s*brief reasoning\s*[::]\s*(.+?)\s*$",
    re.IGNORECASE | re.MULTILINE,
)


def parse_judge_response(text: str, protocol: Protocol) -> DimScores:
    """Extract ``<Dimension>: <int>`` lines (case-insensitive) plus the
    brief reasoning.

    Every protocol dimension must appear exactly once (repeats are fine if
    they agree) with a value in 1-5.
    """
    scores = {}
    for dim in protocol.dimensions:
        pattern = re.compile(
            r"^\s*[-*•]?\s*" + re.escape(dim) + r"\s*[::]\s*([0-9]+)",
            re.IGNORECASE | re.MULTILINE,
        )
        values = {int(m.group(1)) for m in pattern.finditer(text)}
        if not values:
            raise ValidationError(f"missing dimension {dim!r} in judge response")
        if len(values) > 1:
            raise ValidationError(
                f"conflicting values for {dim!r}: {sorted(values)}"
            )
        value = values.pop()
        if not (1 <= value <= 5):
            raise ValidationError(f"{dim} score out of range: {value}")
        scores[dim] = value
    m = _REASONING_RE.search(text)
    reasoning = m.group(1) if m else ""
    return DimScores(scores=scores, reasoning=reasoning)


def enforce_caps(scores: DimScores, protocol: Protocol) -> DimScores:
    """Clamp every non-anchor dimension to the anchor's score.

    Idempotent; the anchor itself is never changed.
    """
    anchor = scores.get(protocol.cap_anchor)
    capped = {
        dim: (value if dim == protocol.cap_anchor else min(value, anchor))
        for dim, value in scores.scores.items()
    }
    return DimScores(scores=capped, reasoning=scores.reasoning)


def _assert_capped(record: EvalRecord, protocol: Protocol) -> None:
    anchor = record.scores.get(protocol.cap_anchor)
    for dim in protocol.dimensions:
        if dim != protocol.cap_anchor and record.scores.get(dim) > anchor:
            raise ValidationError(
                f"record {record.video_id!r} violates the cap: "
                f"{dim}={record.scores.get(dim)} > anchor {anchor}"
            )


# ---------------------------------------------------------------------------
# Aggregation and rendering
# ---------------------------------------------------------------------------

GROUP_BY_CHOICES = ("model", "model-theme", "model-subtheme")

_GROUP_KEYS = {
    "model": ("model",),
    "model-theme": ("model", "theme"),
    "model-subtheme": ("model", "subtheme"),
}


@dataclass(frozen=True)
class TableRow:
    protocol: str
    keys: dict
    n_records: int
    dim_means: dict
    overall: float  # full precision; round at presentation


def aggregate(records: list[EvalRecord], group_by: str = "model") -> list[TableRow]:
    """Group records and compute per-dimension means plus Overall.

    Overall is the unweighted mean of the group's dimension means, at full
    precision; rounding happens only when rendering.
    """
    if not records:
        raise ValidationError("cannot aggregate an empty record set")
    if group_by not in _GROUP_KEYS:
        raise ValidationError(
            f"group_by must be one of {GROUP_BY_CHOICES}, got {group_by!r}"
        )
    protocols = {r.protocol for r in records}
    if len(protocols) != 1:
        raise ValidationError(f"records mix protocols: {sorted(protocols)}")
    protocol = get_protocol(protocols.pop())
    for record in records:
        _assert_capped(record, protocol)

    key_fields = _GROUP_KEYS[group_by]
    groups: dict[tuple, list[EvalRecord]] = {}
    for record in records:
        key = tuple(getattr(record, f) for f in key_fields)
        groups.setdefault(key, []).append(record)

    rows = []
    for key, members in sorted(groups.items()):
        dim_means = {
            dim: sum(r.scores.get(dim) for r in members) / len(members)
            for dim in protocol.dimensions
        }
        overall = sum(dim_means.values()) / len(dim_means)
        rows.append(
            TableRow(
                protocol=protocol.name,
                keys=dict(zip(key_fields, key)),
                n_records=len(members),
                dim_means=dim_means,
                overall=overall,
            )
        )
    return rows


def _sorted_rows(rows: list[TableRow]) -> list[TableRow]:
    # ascending by Overall, then by group keys for a stable order
    return sorted(rows, key=lambda r: (round2(r.overall), tuple(r.keys.values())))


def render_table(rows: list[TableRow], fmt: str = "markdown") -> str:
    """Deterministic leaderboard: Overall first, then the protocol's
    dimension order, rows ascending by Overall."""
    if not rows:
        raise ValidationError("no rows to render")
    protocols = {r.protocol for r in rows}
    if len(protocols) != 1:
        raise ValidationError(f"rows mix protocols: {sorted(protocols)}")
    protocol = get_protocol(protocols.pop())
    key_fields = list(rows[0].keys)
    ordered = _sorted_rows(rows)

    if fmt == "csv":
        header = key_fields + ["overall"] + [
            _ABBREV[d].lower() for d in protocol.dimensions
        ]
        lines = [",".join(header)]
        for row in ordered:
            cells = [str(row.keys[f]) for f in key_fields]
            cells.append(fmt2(row.overall))
            cells.extend(fmt2(row.dim_means[d]) for d in protocol.dimensions)
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    if fmt == "markdown":
        header = [f.capitalize() for f in key_fields] + ["Overall"] + [
            f"{_ABBREV[d]}." for d in protocol.dimensions
        ]
        lines = [
            "| " + " | ".join(header) + " |",
            "|" + "|".join("---" for _ in header) + "|",
        ]
        for row in ordered:
            cells = [str(row.keys[f]) for f in key_fields]
            cells.append(fmt2(row.overall))
            cells.extend(fmt2(row.dim_means[d]) for d in protocol.dimensions)
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"

    raise ValidationError(f"unknown table format {fmt!r}")


# ---------------------------------------------------------------------------
# JSONL ingestion for the evaluate command
# ---------------------------------------------------------------------------

def load_eval_records(path, protocol: Protocol) -> list[EvalRecord]:
    """Read ``{video_id, theme, subtheme, scene, model, judge_response_text}``
    JSONL, parse each judge response, and enforce caps."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        try:
            scores = parse_judge_response(raw["judge_response_text"], protocol)
            records.append(
                EvalRecord(
                    video_id=str(raw["video_id"]),
                    theme=str(raw.get("theme", "")),
                    subtheme=str(raw.get("subtheme", "")),
                    scene=str(raw.get("scene", "")),
                    model=str(raw["model"]),
                    protocol=protocol.name,
                    scores=enforce_caps(scores, protocol),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"{path}:{lineno}: missing field {exc}") from exc
        except ValidationError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    if not records:
        raise ValidationError(f"no records found in {path}")
    return records
