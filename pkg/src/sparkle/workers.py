"""Clients for the external model roles: grounder, editor, animator,
tracker, and scorer (plus the benchmark judge and the optional fine
motion check).

Two interchangeable implementations share one contract and one request-id
scheme:

* :class:`MockWorkers` resolves requests against a JSON fixture of canned
  results, so the whole pipeline runs offline and bit-reproducibly.
* :class:`HttpWorkers` POSTs JSON envelopes ``{"id", "payload"}`` to a
  per-role endpoint and expects ``{"id", "result"}`` or ``{"id", "error"}``
  back. Imagery travels as base64 PNG. Retries use exponential backoff.

Every response is validated at this boundary: box coordinates must be
ordered and inside the frame, scores must lie in [0, 10], and returned
imagery and masks must match the query dimensions.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import requests
from PIL import Image

from .errors import ValidationError, WorkerError
from .masks import MaskVideo
from .media import Frame, VideoClip, as_fraction

log = logging.getLogger(__name__)

TOKEN_ENV = "SPARKLE_WORKER_TOKEN"

ROLES = (
    "grounder",
    "editor",
    "animator",
    "tracker",
    "scorer",
    "judge",
    "motion",
    "prompter",
)
ROLE_PATHS = {
    "grounder": "/ground",
    "editor": "/edit",
    "animator": "/animate",
    "tracker": "/track",
    "scorer": "/score",
    "judge": "/judge",
    "motion": "/motion",
    "prompter": "/prompt",
}

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box for one labelled entity on one frame."""

    label: str
    x0: int
    y0: int
    x1: int
    y1: int
    frame_index: int = 0

    def __post_init__(self):
        if not (0 <= self.x0 < self.x1 and 0 <= self.y0 < self.y1):
            raise ValidationError(
                f"invalid box ({self.x0},{self.y0},{self.x1},{self.y1})"
            )


@dataclass(frozen=True)
class WorkerEndpoint:
    role: str
    url: str
    timeout: float = 30.0
    max_retries: int = 2

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"unknown worker role {self.role!r}")
        if self.timeout <= 0:
            raise ValidationError("endpoint timeout must be positive")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")


@dataclass(frozen=True)
class ScoreReport:
    """Reward-model verdict: overall in [0, 10], optional named sub-scores."""

    overall: float
    sub_scores: dict | None = None

    def __post_init__(self):
        if not (0.0 <= self.overall <= 10.0):
            raise ValidationError(f"score out of range: {self.overall}")


@dataclass(frozen=True)
class PromptSpec:
    """A generated editing prompt plus its taxonomy assignment."""

    edit_prompt: str
    background_caption: str = ""
    foreground_labels: tuple = ()
    theme: str = ""
    subtheme: str = ""
    scene: str = ""

    def __post_init__(self):
        if not self.edit_prompt:
            raise ValidationError("generated prompt must be non-empty")
        object.__setattr__(self, "foreground_labels", tuple(self.foreground_labels))


# ---------------------------------------------------------------------------
# Request ids (shared by the HTTP envelope and the mock fixture keys)
# ---------------------------------------------------------------------------

def instruction_digest(instruction: str) -> str:
    return hashlib.sha256(instruction.encode("utf-8")).hexdigest()[:12]


def ground_id(clip_id: str, frame_index: int, label: str) -> str:
    return f"ground:{clip_id}:{frame_index}:{label}"


def edit_id(clip_id: str, tag: str, instruction: str) -> str:
    return f"edit:{clip_id}:{tag}:{instruction_digest(instruction)}"


def animate_id(clip_id: str, tag: str, n_frames: int) -> str:
    return f"animate:{clip_id}:{tag}:{n_frames}"


def track_id(clip_id: str, box: BoundingBox, direction: str) -> str:
    return (
        f"track:{clip_id}:{box.frame_index}:{direction}:"
        f"{box.x0},{box.y0},{box.x1},{box.y1}"
    )


def score_id(clip_id: str, tag: str, frame_index: int) -> str:
    return f"score:{clip_id}:{tag}:{frame_index}"


def judge_id(video_id: str) -> str:
    return f"judge:{video_id}"


def motion_id(clip_id: str) -> str:
    return f"motion:{clip_id}"


def prompt_id(clip_id: str) -> str:
    return f"prompt:{clip_id}"


# ---------------------------------------------------------------------------
# base64 PNG codecs
# ---------------------------------------------------------------------------

def frame_to_b64(frame: Frame) -> str:
    buf = io.BytesIO()
    Image.fromarray(frame.pixels, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def frame_from_b64(data: str) -> Frame:
    try:
        raw = base64.b64decode(data)
        with Image.open(io.BytesIO(raw)) as img:
            return Frame(np.asarray(img.convert("RGB")))
    except Exception as exc:
        raise WorkerError(f"malformed image payload: {exc}") from exc


def plane_to_b64(plane: np.ndarray) -> str:
    buf = io.BytesIO()
    img = Image.fromarray(plane.astype(np.uint8) * 255, mode="L")
    img.convert("1").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def plane_from_b64(data: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data)
        with Image.open(io.BytesIO(raw)) as img:
            return np.asarray(img.convert("L")) > 127
    except Exception as exc:
        raise WorkerError(f"malformed mask payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Boundary validation
# ---------------------------------------------------------------------------

def _decode_boxes(raw, frame: Frame, labels: Sequence[str], frame_index: int):
    if not isinstance(raw, list):
        raise WorkerError(f"malformed grounding response: {raw!r}")
    boxes = []
    for item in raw:
        try:
            box = BoundingBox(
                label=str(item["label"]),
                x0=int(item["x0"]),
                y0=int(item["y0"]),
                x1=int(item["x1"]),
                y1=int(item["y1"]),
                frame_index=frame_index,
            )
        except ValidationError as exc:
            raise WorkerError(str(exc)) from exc
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkerError(f"malformed box: {item!r}") from exc
        if box.x1 > frame.width or box.y1 > frame.height:
            raise WorkerError(
                f"invalid box ({box.x0},{box.y0},{box.x1},{box.y1}) "
                f"outside {frame.width}x{frame.height} frame"
            )
        if box.label not in labels:
            raise WorkerError(f"box label {box.label!r} was not requested")
        boxes.append(box)
    return boxes


def _require_same_size(result: Frame, like: Frame) -> Frame:
    if (result.width, result.height) != (like.width, like.height):
        raise WorkerError(
            f"dimension mismatch: worker returned {result.width}x{result.height}, "
            f"expected {like.width}x{like.height}"
        )
    return result


def _require_score(value) -> ScoreReport:
    try:
        overall = float(value["overall"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WorkerError(f"malformed score response: {value!r}") from exc
    sub = value.get("sub_scores") if isinstance(value, dict) else None
    try:
        return ScoreReport(overall=overall, sub_scores=sub)
    except ValidationError as exc:
        raise WorkerError(str(exc)) from exc


def _require_clip(clip: VideoClip, like: Frame, n_frames: int) -> VideoClip:
    if clip.n_frames != n_frames:
        raise WorkerError(
            f"wrong frame count from animator: got {clip.n_frames}, "
            f"expected {n_frames}"
        )
    if (clip.width, clip.height) != (like.width, like.height):
        raise WorkerError(
            f"dimension mismatch: animator returned {clip.width}x{clip.height}, "
            f"expected {like.width}x{like.height}"
        )
    if not np.array_equal(clip.frames[0].pixels, like.pixels):
        raise WorkerError("animator broke the first-frame identity convention")
    return clip


def _require_mask_video(mask: MaskVideo, clip: VideoClip) -> MaskVideo:
    if mask.n_frames != clip.n_frames or (mask.width, mask.height) != (
        clip.width,
        clip.height,
    ):
        raise WorkerError(
            f"mask dimension mismatch: got {mask.n_frames}x{mask.height}x"
            f"{mask.width}, expected {clip.n_frames}x{clip.height}x{clip.width}"
        )
    return mask


def _check_direction(direction: str) -> str:
    if direction not in (FORWARD, BACKWARD):
        raise ValidationError(f"direction must be forward or backward, got {direction!r}")
    return direction


def _require_prompt(value) -> PromptSpec:
    try:
        return PromptSpec(
            edit_prompt=str(value["edit_prompt"]),
            background_caption=str(value.get("background_caption", "")),
            foreground_labels=tuple(value.get("foreground_labels", ())),
            theme=str(value.get("theme", "")),
            subtheme=str(value.get("subtheme", "")),
            scene=str(value.get("scene", "")),
        )
    except ValidationError as exc:
        raise WorkerError(str(exc)) from exc
    except (KeyError, TypeError) as exc:
        raise WorkerError(f"malformed prompt response: {value!r}") from exc


# ---------------------------------------------------------------------------
# Scripted mock workers
# ---------------------------------------------------------------------------

class MockWorkers:
    """Fixture-scripted workers: a pure function of (fixture, request).

    The fixture is a JSON object mapping request ids to canned results
    (optionally wrapped in a ``{"responses": ...}`` envelope). Animation and
    tracking results are small policy objects interpreted mechanically, so
    fixtures can model specific failure modes such as tracking dropouts or
    spurious blobs frame-exactly.
    """

    def __init__(self, fixture):
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text())
        if not isinstance(fixture, dict):
            raise ValidationError("mock fixture must be a JSON object")
        self.responses = fixture.get("responses", fixture)
        self.calls = 0
        self.calls_by_role: dict[str, int] = {}
        self._lock = threading.Lock()

    def _count(self, role: str) -> None:
        with self._lock:
            self.calls += 1
            self.calls_by_role[role] = self.calls_by_role.get(role, 0) + 1

    def _lookup(self, req_id: str):
        if req_id not in self.responses:
            raise WorkerError(f"no scripted response for {req_id!r}")
        return self.responses[req_id]

    # -- roles --------------------------------------------------------------

    def ground(
        self,
        frame: Frame,
        labels: Sequence[str],
        *,
        frame_index: int = 0,
        clip_id: str = "",
    ) -> list[BoundingBox]:
        if not labels:
            raise ValidationError("grounding needs at least one label")
        self._count("grounder")
        boxes = []
        for label in labels:
            raw = self.responses.get(ground_id(clip_id, frame_index, label), [])
            boxes.extend(_decode_boxes(raw, frame, [label], frame_index))
        return boxes

    def edit_image(
        self, frame: Frame, instruction: str, *, clip_id: str = "", tag: str = "edit"
    ) -> Frame:
        if not instruction:
            raise ValidationError("edit instruction must be non-empty")
        self._count("editor")
        spec = self._lookup(edit_id(clip_id, tag, instruction))
        policy = spec.get("policy", "echo")
        if policy == "echo":
            result = frame
        elif policy == "fill":
            rgb = np.array(spec["rgb"], dtype=np.uint8)
            result = Frame(np.broadcast_to(rgb, frame.pixels.shape).copy())
        elif policy == "image":
            result = frame_from_b64(spec["image"])
        else:
            raise WorkerError(f"unknown edit policy {policy!r}")
        return _require_same_size(result, frame)

    def animate_background(
        self,
        frame: Frame,
        caption: str,
        n_frames: int,
        fps,
        *,
        clip_id: str = "",
        tag: str = "background",
        guidance: Sequence[np.ndarray] | None = None,
    ) -> VideoClip:
        if n_frames < 1:
            raise ValidationError(f"n_frames must be >= 1, got {n_frames}")
        self._count("animator")
        spec = self._lookup(animate_id(clip_id, tag, n_frames))
        policy = spec.get("policy", "static")
        if policy == "static":
            frames = [frame] * n_frames
        elif policy == "drift":
            delta = int(spec.get("delta", 1))
            frames = [
                Frame(np.roll(frame.pixels, k * delta, axis=1)) for k in range(n_frames)
            ]
        else:
            raise WorkerError(f"unknown animate policy {policy!r}")
        clip = VideoClip(frames, as_fraction(fps))
        return _require_clip(clip, frame, n_frames)

    def propagate_mask(
        self,
        clip: VideoClip,
        anchor: BoundingBox,
        direction: str,
        *,
        clip_id: str = "",
    ) -> MaskVideo:
        _check_direction(direction)
        if not (0 <= anchor.frame_index < clip.n_frames):
            raise ValidationError(
                f"anchor frame {anchor.frame_index} outside clip of "
                f"{clip.n_frames} frames"
            )
        self._count("tracker")
        spec = self._lookup(track_id(clip_id, anchor, direction))
        policy = spec.get("policy", "box-follow")
        if policy != "box-follow":
            raise WorkerError(f"unknown track policy {policy!r}")
        offsets = spec.get("offsets")
        dropout = set(spec.get("dropout", []))
        blobs = spec.get("blobs", [])
        h, w = clip.height, clip.width
        masks = np.zeros((clip.n_frames, h, w), dtype=bool)
        if direction == FORWARD:
            covered = range(anchor.frame_index, clip.n_frames)
        else:
            covered = range(0, anchor.frame_index + 1)
        for t in covered:
            if t in dropout:
                continue
            dx, dy = offsets[t] if offsets is not None else (0, 0)
            x0 = max(0, anchor.x0 + int(dx))
            x1 = min(w, anchor.x1 + int(dx))
            y0 = max(0, anchor.y0 + int(dy))
            y1 = min(h, anchor.y1 + int(dy))
            if x0 < x1 and y0 < y1:
                masks[t, y0:y1, x0:x1] = True
        for blob in blobs:
            t = int(blob["frame"])
            bx0, by0, bx1, by1 = (int(v) for v in blob["box"])
            masks[t, by0:by1, bx0:bx1] = True
        return _require_mask_video(MaskVideo(masks), clip)

    def score_edit(
        self,
        before: Frame,
        after: Frame,
        prompt: str,
        *,
        clip_id: str = "",
        tag: str = "",
        frame_index: int = 0,
    ) -> ScoreReport:
        if (before.width, before.height) != (after.width, after.height):
            raise ValidationError("scored frames must share dimensions")
        self._count("scorer")
        return _require_score(self._lookup(score_id(clip_id, tag, frame_index)))

    def judge(self, prompt: str, *, video_id: str = "") -> str:
        if not prompt:
            raise ValidationError("judge prompt must be non-empty")
        self._count("judge")
        spec = self._lookup(judge_id(video_id))
        try:
            return str(spec["text"])
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed judge response: {spec!r}") from exc

    def verify_static(self, clip: VideoClip, *, clip_id: str = "") -> bool:
        self._count("motion")
        spec = self._lookup(motion_id(clip_id))
        try:
            return bool(spec["static"])
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed motion response: {spec!r}") from exc

    def generate_prompt(
        self, frame: Frame, taxonomy: dict, *, clip_id: str = ""
    ) -> PromptSpec:
        self._count("prompter")
        return _require_prompt(self._lookup(prompt_id(clip_id)))


# ---------------------------------------------------------------------------
# HTTP workers
# ---------------------------------------------------------------------------

class HttpWorkers:
    """JSON-over-HTTP client for live worker endpoints.

    One endpoint per role; requests are retried ``max_retries`` times on
    transport errors and 5xx responses with exponential backoff (0.5 s base,
    doubling). Identical request bodies are sent on every retry, so calls
    are idempotent at the client. In-flight requests per endpoint are
    bounded by ``max_inflight``.
    """

    def __init__(
        self,
        endpoints: dict[str, WorkerEndpoint],
        token: str | None = None,
        backoff_base: float = 0.5,
        backoff_factor: float = 2.0,
        max_inflight: int = 4,
        session: requests.Session | None = None,
    ):
        self.endpoints = dict(endpoints)
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.session = session or requests.Session()
        self.retries_total = 0
        self._gates = {
            role: threading.Semaphore(max_inflight) for role in self.endpoints
        }

    def _endpoint(self, role: str) -> WorkerEndpoint:
        try:
            return self.endpoints[role]
        except KeyError:
            raise ValidationError(f"no endpoint configured for role {role!r}")

    def _post(self, role: str, req_id: str, payload: dict):
        ep = self._endpoint(role)
        url = ep.url.rstrip("/") + ROLE_PATHS[role]
        body = {"id": req_id, "payload": payload}
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_error = None
        for attempt in range(ep.max_retries + 1):
            if attempt:
                self.retries_total += 1
                time.sleep(self.backoff_base * self.backoff_factor ** (attempt - 1))
            try:
                with self._gates[role]:
                    resp = self.session.post(
                        url, json=body, headers=headers, timeout=ep.timeout
                    )
            except requests.RequestException as exc:
                last_error = f"transport error: {exc}"
                log.warning("%s %s attempt %d failed: %s", role, req_id, attempt, exc)
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                log.warning("%s %s attempt %d: %s", role, req_id, attempt, last_error)
                continue
            if resp.status_code != 200:
                raise WorkerError(f"{role} returned HTTP {resp.status_code}")
            try:
                envelope = resp.json()
            except ValueError as exc:
                raise WorkerError(f"{role} returned invalid JSON: {exc}") from exc
            if "error" in envelope:
                raise WorkerError(f"{role} error: {envelope['error']}")
            if "result" not in envelope:
                raise WorkerError(f"{role} response missing 'result'")
            return envelope["result"]
        raise WorkerError(
            f"{role} unreachable after {ep.max_retries + 1} attempts "
            f"({last_error})"
        )

    # -- roles --------------------------------------------------------------

    def ground(
        self,
        frame: Frame,
        labels: Sequence[str],
        *,
        frame_index: int = 0,
        clip_id: str = "",
    ) -> list[BoundingBox]:
        if not labels:
            raise ValidationError("grounding needs at least one label")
        boxes = []
        b64 = frame_to_b64(frame)
        for label in labels:
            result = self._post(
                "grounder",
                ground_id(clip_id, frame_index, label),
                {"frame": b64, "labels": [label], "frame_index": frame_index},
            )
            boxes.extend(_decode_boxes(result, frame, [label], frame_index))
        return boxes

    def edit_image(
        self, frame: Frame, instruction: str, *, clip_id: str = "", tag: str = "edit"
    ) -> Frame:
        if not instruction:
            raise ValidationError("edit instruction must be non-empty")
        result = self._post(
            "editor",
            edit_id(clip_id, tag, instruction),
            {"image": frame_to_b64(frame), "instruction": instruction},
        )
        try:
            out = frame_from_b64(result["image"])
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed edit response: {result!r}") from exc
        return _require_same_size(out, frame)

    def animate_background(
        self,
        frame: Frame,
        caption: str,
        n_frames: int,
        fps,
        *,
        clip_id: str = "",
        tag: str = "background",
        guidance: Sequence[np.ndarray] | None = None,
    ) -> VideoClip:
        if n_frames < 1:
            raise ValidationError(f"n_frames must be >= 1, got {n_frames}")
        fps = as_fraction(fps)
        payload = {
            "image": frame_to_b64(frame),
            "caption": caption,
            "n_frames": n_frames,
            "fps": f"{fps.numerator}/{fps.denominator}",
        }
        if guidance is not None:
            payload["guidance"] = [plane_to_b64(np.asarray(g)) for g in guidance]
        result = self._post("animator", animate_id(clip_id, tag, n_frames), payload)
        try:
            frames = [frame_from_b64(f) for f in result["frames"]]
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed animate response: {result!r}") from exc
        return _require_clip(VideoClip(frames, fps), frame, n_frames)

    def propagate_mask(
        self,
        clip: VideoClip,
        anchor: BoundingBox,
        direction: str,
        *,
        clip_id: str = "",
    ) -> MaskVideo:
        _check_direction(direction)
        if not (0 <= anchor.frame_index < clip.n_frames):
            raise ValidationError(
                f"anchor frame {anchor.frame_index} outside clip of "
                f"{clip.n_frames} frames"
            )
        result = self._post(
            "tracker",
            track_id(clip_id, anchor, direction),
            {
                "frames": [frame_to_b64(f) for f in clip.frames],
                "box": {
                    "label": anchor.label,
                    "x0": anchor.x0,
                    "y0": anchor.y0,
                    "x1": anchor.x1,
                    "y1": anchor.y1,
                    "frame_index": anchor.frame_index,
                },
                "direction": direction,
            },
        )
        try:
            planes = np.stack([plane_from_b64(m) for m in result["masks"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkerError(f"malformed track response: {result!r}") from exc
        return _require_mask_video(MaskVideo(planes), clip)

    def score_edit(
        self,
        before: Frame,
        after: Frame,
        prompt: str,
        *,
        clip_id: str = "",
        tag: str = "",
        frame_index: int = 0,
    ) -> ScoreReport:
        if (before.width, before.height) != (after.width, after.height):
            raise ValidationError("scored frames must share dimensions")
        result = self._post(
            "scorer",
            score_id(clip_id, tag, frame_index),
            {
                "before": frame_to_b64(before),
                "after": frame_to_b64(after),
                "prompt": prompt,
            },
        )
        return _require_score(result)

    def judge(self, prompt: str, *, video_id: str = "") -> str:
        if not prompt:
            raise ValidationError("judge prompt must be non-empty")
        result = self._post("judge", judge_id(video_id), {"prompt": prompt})
        try:
            return str(result["text"])
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed judge response: {result!r}") from exc

    def verify_static(self, clip: VideoClip, *, clip_id: str = "") -> bool:
        result = self._post(
            "motion",
            motion_id(clip_id),
            {"frames": [frame_to_b64(f) for f in clip.frames]},
        )
        try:
            return bool(result["static"])
        except (KeyError, TypeError) as exc:
            raise WorkerError(f"malformed motion response: {result!r}") from exc

    def generate_prompt(
        self, frame: Frame, taxonomy: dict, *, clip_id: str = ""
    ) -> PromptSpec:
        result = self._post(
            "prompter",
            prompt_id(clip_id),
            {"frame": frame_to_b64(frame), "taxonomy": taxonomy},
        )
        return _require_prompt(result)
