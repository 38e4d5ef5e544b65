from __future__ import annotations

import base64
import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from sparkle.errors import ValidationError, WorkerError
from sparkle.media import VideoClip
from sparkle.synthetic import noise_frame
from sparkle.workers import (
    TOKEN_ENV,
    BoundingBox,
    HttpWorkers,
    MockWorkers,
    ScoreReport,
    WorkerEndpoint,
    animate_id,
    edit_id,
    frame_to_b64,
    ground_id,
    prompt_id,
    score_id,
    track_id,
)


@pytest.fixture
def frame(rng):
    return noise_frame(rng, 64, 64)


@pytest.fixture
def clip(rng):
    return VideoClip([noise_frame(rng, 16, 16) for _ in range(6)], 8)


class TestTypes:
    def test_invalid_box(self):
        with pytest.raises(ValidationError, match="invalid box"):
            BoundingBox("x", 10, 5, 10, 20)
        with pytest.raises(ValidationError, match="invalid box"):
            BoundingBox("x", -1, 0, 5, 5)

    def test_score_out_of_range(self):
        with pytest.raises(ValidationError, match="score out of range"):
            ScoreReport(overall=11.2)
        ScoreReport(overall=0.0)
        ScoreReport(overall=10.0)

    def test_endpoint_invariants(self):
        with pytest.raises(ValidationError):
            WorkerEndpoint("scorer", "http://x", timeout=0)
        with pytest.raises(ValidationError):
            WorkerEndpoint("scorer", "http://x", max_retries=-1)
        with pytest.raises(ValidationError):
            WorkerEndpoint("nonsense", "http://x")


class TestMockGrounder:
    def test_scripted_box(self, frame):
        workers = MockWorkers(
            {ground_id("c", 0, "bald man"): [
                {"label": "bald man", "x0": 10, "y0": 5, "x1": 30, "y1": 60}
            ]}
        )
        boxes = workers.ground(frame, ["bald man"], frame_index=0, clip_id="c")
        assert boxes == [BoundingBox("bald man", 10, 5, 30, 60, frame_index=0)]

    def test_absent_label_empty(self, frame):
        workers = MockWorkers({})
        assert workers.ground(frame, ["ghost"], frame_index=0, clip_id="c") == []

    def test_invalid_box_rejected(self, frame):
        workers = MockWorkers(
            {ground_id("c", 0, "x"): [{"label": "x", "x0": 30, "y0": 5, "x1": 10, "y1": 60}]}
        )
        with pytest.raises(WorkerError, match="invalid box"):
            workers.ground(frame, ["x"], frame_index=0, clip_id="c")

    def test_box_outside_frame_rejected(self, frame):
        workers = MockWorkers(
            {ground_id("c", 0, "x"): [{"label": "x", "x0": 0, "y0": 0, "x1": 65, "y1": 10}]}
        )
        with pytest.raises(WorkerError, match="invalid box"):
            workers.ground(frame, ["x"], frame_index=0, clip_id="c")

    def test_empty_labels_rejected(self, frame):
        with pytest.raises(ValidationError):
            MockWorkers({}).ground(frame, [], clip_id="c")


class TestMockEditor:
    def test_echo(self, frame):
        workers = MockWorkers({edit_id("c", "edit", "do it"): {"policy": "echo"}})
        out = workers.edit_image(frame, "do it", clip_id="c")
        assert np.array_equal(out.pixels, frame.pixels)

    def test_fill(self, frame):
        workers = MockWorkers(
            {edit_id("c", "edit", "paint"): {"policy": "fill", "rgb": [1, 2, 3]}}
        )
        out = workers.edit_image(frame, "paint", clip_id="c")
        assert (out.width, out.height) == (frame.width, frame.height)
        assert np.all(out.pixels == [1, 2, 3])

    def test_unknown_key(self, frame):
        with pytest.raises(WorkerError, match="no scripted response"):
            MockWorkers({}).edit_image(frame, "mystery", clip_id="c")

    def test_empty_instruction(self, frame):
        with pytest.raises(ValidationError):
            MockWorkers({}).edit_image(frame, "", clip_id="c")


class TestMockAnimator:
    def test_static_policy(self, frame):
        workers = MockWorkers({animate_id("c", "background", 4): {"policy": "static"}})
        clip = workers.animate_background(frame, "calm", 4, 8, clip_id="c")
        assert clip.n_frames == 4
        for f in clip.frames:
            assert np.array_equal(f.pixels, frame.pixels)

    def test_drift_policy(self, frame):
        workers = MockWorkers(
            {animate_id("c", "background", 3): {"policy": "drift", "delta": 2}}
        )
        clip = workers.animate_background(frame, "drift", 3, 8, clip_id="c")
        for k, f in enumerate(clip.frames):
            assert np.array_equal(f.pixels, np.roll(frame.pixels, k * 2, axis=1))

    def test_zero_frames_rejected(self, frame):
        with pytest.raises(ValidationError, match="n_frames"):
            MockWorkers({}).animate_background(frame, "x", 0, 8, clip_id="c")


class TestMockTracker:
    def test_box_follow_zero_offsets(self, clip):
        anchor = BoundingBox("thing", 2, 3, 6, 7, frame_index=2)
        workers = MockWorkers(
            {track_id("c", anchor, "forward"): {"policy": "box-follow"}}
        )
        mv = workers.propagate_mask(clip, anchor, "forward", clip_id="c")
        assert mv.n_frames == clip.n_frames
        for t in range(clip.n_frames):
            expected = np.zeros((16, 16), bool)
            if t >= 2:
                expected[3:7, 2:6] = True
            assert np.array_equal(mv.masks[t], expected)

    def test_backward_covers_prefix(self, clip):
        anchor = BoundingBox("thing", 2, 3, 6, 7, frame_index=2)
        workers = MockWorkers(
            {track_id("c", anchor, "backward"): {"policy": "box-follow"}}
        )
        mv = workers.propagate_mask(clip, anchor, "backward", clip_id="c")
        assert mv.masks[:3].any(axis=(1, 2)).all()
        assert not mv.masks[3:].any()

    def test_dropout_empties_frame(self, clip):
        anchor = BoundingBox("thing", 2, 3, 6, 7, frame_index=0)
        workers = MockWorkers(
            {track_id("c", anchor, "forward"): {"policy": "box-follow", "dropout": [4]}}
        )
        mv = workers.propagate_mask(clip, anchor, "forward", clip_id="c")
        assert not mv.masks[4].any()
        assert mv.masks[3].any()

    def test_offsets_move_box(self, clip):
        anchor = BoundingBox("thing", 0, 0, 4, 4, frame_index=0)
        offsets = [[t, 0] for t in range(clip.n_frames)]
        workers = MockWorkers(
            {track_id("c", anchor, "forward"): {"policy": "box-follow", "offsets": offsets}}
        )
        mv = workers.propagate_mask(clip, anchor, "forward", clip_id="c")
        assert mv.masks[3, 0:4, 3:7].all()
        assert not mv.masks[3, :, 0:3].any()

    def test_anchor_out_of_range(self, clip):
        anchor = BoundingBox("thing", 2, 3, 6, 7, frame_index=99)
        with pytest.raises(ValidationError, match="outside clip"):
            MockWorkers({}).propagate_mask(clip, anchor, "forward", clip_id="c")

    def test_bad_direction(self, clip):
        anchor = BoundingBox("thing", 2, 3, 6, 7, frame_index=0)
        with pytest.raises(ValidationError, match="direction"):
            MockWorkers({}).propagate_mask(clip, anchor, "sideways", clip_id="c")


class TestMockScorer:
    def test_scripted_score(self, frame):
        workers = MockWorkers({score_id("c", "edit", 0): {"overall": 8.6}})
        report = workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")
        assert report.overall == 8.6

    def test_out_of_range(self, frame):
        workers = MockWorkers({score_id("c", "edit", 0): {"overall": 11.2}})
        with pytest.raises(WorkerError, match="score out of range"):
            workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")

    def test_dimension_mismatch(self, rng, frame):
        other = noise_frame(rng, 32, 32)
        with pytest.raises(ValidationError, match="dimensions"):
            MockWorkers({}).score_edit(frame, other, "p", clip_id="c")


class TestMockPurity:
    def test_two_runs_identical(self, frame):
        fixture = {
            edit_id("c", "edit", "go"): {"policy": "fill", "rgb": [9, 9, 9]},
            score_id("c", "edit", 0): {"overall": 9.0},
        }
        w1, w2 = MockWorkers(fixture), MockWorkers(fixture)
        a1 = w1.edit_image(frame, "go", clip_id="c")
        a2 = w2.edit_image(frame, "go", clip_id="c")
        assert np.array_equal(a1.pixels, a2.pixels)
        assert w1.score_edit(frame, frame, "p", clip_id="c", tag="edit") == \
            w2.score_edit(frame, frame, "p", clip_id="c", tag="edit")

    def test_call_counters(self, frame):
        workers = MockWorkers({score_id("c", "t", 0): {"overall": 5.0}})
        assert workers.calls == 0
        workers.score_edit(frame, frame, "p", clip_id="c", tag="t")
        workers.score_edit(frame, frame, "p", clip_id="c", tag="t")
        assert workers.calls == 2
        assert workers.calls_by_role == {"scorer": 2}

    def test_fixture_from_file(self, tmp_path, frame):
        path = tmp_path / "fixture.json"
        path.write_text(json.dumps({"responses": {score_id("c", "t", 0): {"overall": 4.0}}}))
        workers = MockWorkers(path)
        assert workers.score_edit(frame, frame, "p", clip_id="c", tag="t").overall == 4.0


class TestMockPrompter:
    def test_scripted_prompt(self, frame):
        workers = MockWorkers(
            {prompt_id("c"): {
                "edit_prompt": "Replace the background with a beach",
                "background_caption": "a sunny beach",
                "foreground_labels": ["surfer"],
                "theme": "Location",
            }}
        )
        spec = workers.generate_prompt(frame, {}, clip_id="c")
        assert spec.edit_prompt == "Replace the background with a beach"
        assert spec.foreground_labels == ("surfer",)
        assert spec.theme == "Location"

    def test_empty_prompt_rejected(self, frame):
        workers = MockWorkers({prompt_id("c"): {"edit_prompt": ""}})
        with pytest.raises(WorkerError, match="non-empty"):
            workers.generate_prompt(frame, {}, clip_id="c")


# ---------------------------------------------------------------------------
# HTTP transport against a scripted local server
# ---------------------------------------------------------------------------

class _ScriptedHandler(BaseHTTPRequestHandler):
    script = {}  # path -> list of (status, body_fn) consumed in order
    requests_seen = []

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        type(self).requests_seen.append((self.path, body, dict(self.headers)))
        queue = self.script.get(self.path, [])
        status, body_fn = queue.pop(0) if len(queue) > 1 else queue[0]
        payload = json.dumps(body_fn(body)).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        if status == 200:
            self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    _ScriptedHandler.script = {}
    _ScriptedHandler.requests_seen = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, f"http://127.0.0.1:{server.server_port}"
    server.shutdown()
    thread.join()


def _workers_for(url, role, retries=2):
    return HttpWorkers(
        {role: WorkerEndpoint(role, url, timeout=5, max_retries=retries)},
        token="sesame",
        backoff_base=0.0,
    )


class TestHttpWorkers:
    def test_edit_round_trip_and_request_body(self, http_server, frame):
        server, url = http_server
        echoed = frame_to_b64(frame)
        _ScriptedHandler.script["/edit"] = [
            (200, lambda body: {"id": body["id"], "result": {"image": echoed}})
        ]
        workers = _workers_for(url, "editor")
        out = workers.edit_image(frame, "make it rain", clip_id="c")
        assert np.array_equal(out.pixels, frame.pixels)
        path, body, headers = _ScriptedHandler.requests_seen[0]
        assert path == "/edit"
        assert body["id"] == edit_id("c", "edit", "make it rain")
        assert body["payload"]["instruction"] == "make it rain"
        base64.b64decode(body["payload"]["image"])  # decodable imagery
        assert headers["Authorization"] == "Bearer sesame"

    def test_retry_then_success(self, http_server, frame):
        server, url = http_server
        _ScriptedHandler.script["/score"] = [
            (500, lambda body: {}),
            (200, lambda body: {"id": body["id"], "result": {"overall": 8.6}}),
        ]
        workers = _workers_for(url, "scorer")
        report = workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")
        assert report.overall == 8.6
        assert workers.retries_total == 1

    def test_retries_exhausted(self, http_server, frame):
        server, url = http_server
        _ScriptedHandler.script["/score"] = [(500, lambda body: {})]
        workers = _workers_for(url, "scorer", retries=1)
        with pytest.raises(WorkerError, match="unreachable"):
            workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")
        assert workers.retries_total == 1

    def test_envelope_error(self, http_server, frame):
        server, url = http_server
        _ScriptedHandler.script["/score"] = [
            (200, lambda body: {"id": body["id"], "error": "model exploded"})
        ]
        workers = _workers_for(url, "scorer")
        with pytest.raises(WorkerError, match="model exploded"):
            workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")

    def test_score_out_of_range_from_server(self, http_server, frame):
        server, url = http_server
        _ScriptedHandler.script["/score"] = [
            (200, lambda body: {"id": body["id"], "result": {"overall": 11.2}})
        ]
        workers = _workers_for(url, "scorer")
        with pytest.raises(WorkerError, match="score out of range"):
            workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")

    def test_animate_wrong_frame_count(self, http_server, frame):
        server, url = http_server
        one = frame_to_b64(frame)
        _ScriptedHandler.script["/animate"] = [
            (200, lambda body: {"id": body["id"], "result": {"frames": [one]}})
        ]
        workers = _workers_for(url, "animator")
        with pytest.raises(WorkerError, match="wrong frame count"):
            workers.animate_background(frame, "x", 3, 8, clip_id="c")

    def test_unconfigured_role(self, frame):
        workers = HttpWorkers({})
        with pytest.raises(ValidationError, match="no endpoint"):
            workers.score_edit(frame, frame, "p", clip_id="c")

    def test_token_from_environment(self, http_server, frame, monkeypatch):
        server, url = http_server
        monkeypatch.setenv(TOKEN_ENV, "from-env")
        _ScriptedHandler.script["/score"] = [
            (200, lambda body: {"id": body["id"], "result": {"overall": 5.0}})
        ]
        workers = HttpWorkers(
            {"scorer": WorkerEndpoint("scorer", url, timeout=5)}, backoff_base=0.0
        )
        workers.score_edit(frame, frame, "p", clip_id="c", tag="edit")
        _, _, headers = _ScriptedHandler.requests_seen[0]
        assert headers["Authorization"] == "Bearer from-env"
