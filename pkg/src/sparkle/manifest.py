"""Manifest records: the single source of truth for each clip's journey.

The manifest is a JSONL file, one record per line, rewritten atomically
(temp file plus rename) after every stage transition. Records carry no
timestamps, so two identical runs produce byte-identical manifests.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ValidationError

STAGES = (1, 2, 3, 4, 5)

PENDING = "pending"
DONE = "done"
REJECTED = "rejected"
FAILED = "failed"

_STATUSES = (PENDING, DONE, REJECTED, FAILED)

# artifact roles recorded on the way through the stages
ARTIFACT_ROLES = (
    "edited_first_frame",
    "background_image",
    "background_clip",
    "mask_video",
    "guidance_video",
    "final_clip",
)


def _default_status() -> dict:
    return {str(s): PENDING for s in STAGES}


@dataclass
class ManifestRecord:
    clip_id: str
    source_path: str
    theme: str = ""
    subtheme: str = ""
    scene: str = ""
    edit_prompt: str = ""
    background_caption: str = ""
    foreground_labels: list = field(default_factory=list)
    stage_status: dict = field(default_factory=_default_status)
    gate_results: list = field(default_factory=list)
    artifact_paths: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    motion: dict | None = None
    failure_stage: int | None = None
    failure_reason: str | None = None

    def status(self, stage: int) -> str:
        return self.stage_status.get(str(stage), PENDING)

    def set_status(self, stage: int, status: str) -> None:
        if status not in _STATUSES:
            raise ValidationError(f"unknown stage status {status!r}")
        self.stage_status[str(stage)] = status

    @property
    def accepted(self) -> bool:
        return all(self.status(s) == DONE for s in STAGES)

    @property
    def terminal(self) -> bool:
        if self.accepted:
            return True
        return any(self.status(s) in (REJECTED, FAILED) for s in STAGES)

    def next_stage(self) -> int | None:
        """First pending stage, or None when the record is terminal."""
        if self.terminal:
            return None
        for s in STAGES:
            if self.status(s) == PENDING:
                return s
        return None

    def validate(self) -> None:
        """Stage ordering: stage k done implies stages 1..k-1 done."""
        done_seen_gap = False
        for s in STAGES:
            st = self.status(s)
            if st == DONE and done_seen_gap:
                raise ValidationError(
                    f"record {self.clip_id!r}: stage {s} done after a non-done stage"
                )
            if st != DONE:
                done_seen_gap = True
        if (
            any(self.status(s) in (REJECTED, FAILED) for s in STAGES)
            and self.failure_stage is None
        ):
            raise ValidationError(
                f"record {self.clip_id!r}: rejected/failed without a failure stage"
            )

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "source_path": self.source_path,
            "theme": self.theme,
            "subtheme": self.subtheme,
            "scene": self.scene,
            "edit_prompt": self.edit_prompt,
            "background_caption": self.background_caption,
            "foreground_labels": list(self.foreground_labels),
            "stage_status": dict(self.stage_status),
            "gate_results": list(self.gate_results),
            "artifact_paths": dict(self.artifact_paths),
            "seeds": dict(self.seeds),
            "motion": self.motion,
            "failure_stage": self.failure_stage,
            "failure_reason": self.failure_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        try:
            record = cls(
                clip_id=str(d["clip_id"]),
                source_path=str(d["source_path"]),
                theme=str(d.get("theme", "")),
                subtheme=str(d.get("subtheme", "")),
                scene=str(d.get("scene", "")),
                edit_prompt=str(d.get("edit_prompt", "")),
                background_caption=str(d.get("background_caption", "")),
                foreground_labels=list(d.get("foreground_labels", [])),
                stage_status={**_default_status(), **d.get("stage_status", {})},
                gate_results=list(d.get("gate_results", [])),
                artifact_paths=dict(d.get("artifact_paths", {})),
                seeds=dict(d.get("seeds", {})),
                motion=d.get("motion"),
                failure_stage=d.get("failure_stage"),
                failure_reason=d.get("failure_reason"),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed manifest record: {exc}") from exc
        return record


def load_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such manifest: {path}")
    records = []
    seen = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = ManifestRecord.from_dict(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        record.validate()
        if record.clip_id in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate clip_id {record.clip_id!r}")
        seen.add(record.clip_id)
        records.append(record)
    return records


def save_manifest(records: list[ManifestRecord], path) -> None:
    """Atomic rewrite: write a sibling temp file, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    for record in records:
        record.validate()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict(), sort_keys=True))
                fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
