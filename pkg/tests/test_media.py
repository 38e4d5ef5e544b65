from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest

from sparkle.errors import ValidationError
from sparkle.media import (
    Frame,
    VideoClip,
    load_clip,
    load_frame,
    rgb_to_ycbcr,
    sample_at_fps,
    save_frame,
    uniform_sample_excluding_first,
    write_clip,
    ycbcr_to_rgb,
)
from tests.conftest import random_clip


def gray_clip(n=3, h=4, w=4, fps=8) -> VideoClip:
    return VideoClip([Frame(np.full((h, w, 3), 90, np.uint8))] * n, fps)


class TestFrameInvariants:
    def test_rejects_wrong_shape(self):
        with pytest.raises(ValidationError):
            Frame(np.zeros((4, 4), np.uint8))
        with pytest.raises(ValidationError):
            Frame(np.zeros((4, 4, 4), np.uint8))

    def test_rejects_empty(self):
        with pytest.raises(ValidationError):
            Frame(np.zeros((0, 4, 3), np.uint8))

    def test_clip_rejects_mixed_dimensions(self):
        a = Frame(np.zeros((4, 4, 3), np.uint8))
        b = Frame(np.zeros((4, 6, 3), np.uint8))
        with pytest.raises(ValidationError, match="mixed frame dimensions"):
            VideoClip([a, b], 8)

    def test_clip_rejects_bad_fps(self):
        a = Frame(np.zeros((4, 4, 3), np.uint8))
        with pytest.raises(ValidationError):
            VideoClip([a], 0)
        with pytest.raises(ValidationError):
            VideoClip([a], -2)

    def test_clip_rejects_empty(self):
        with pytest.raises(ValidationError):
            VideoClip([], 8)


class TestSampleAtFps:
    def test_81_frames_at_16fps_sampled_at_2(self):
        clip = gray_clip(n=81, fps=16)
        assert sample_at_fps(clip, 2) == [0, 8, 16, 24, 32, 40, 48, 56, 64, 72, 80]

    def test_10_frames_at_8fps_sampled_at_2(self):
        clip = gray_clip(n=10, fps=8)
        assert sample_at_fps(clip, 2) == [0, 4, 8]

    def test_target_above_native_returns_all(self):
        clip = gray_clip(n=5, fps=2)
        assert sample_at_fps(clip, 4) == [0, 1, 2, 3, 4]

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValidationError):
            sample_at_fps(gray_clip(), 0)

    def test_properties_random(self, rng):
        # strictly increasing, starts at 0, gap within 1 of fps/target
        for _ in range(200):
            n = int(rng.integers(1, 200))
            fps = Fraction(int(rng.integers(1, 61)), int(rng.integers(1, 4)))
            target = Fraction(int(rng.integers(1, 31)), int(rng.integers(1, 3)))
            clip = gray_clip(n=n, fps=fps)
            indices = sample_at_fps(clip, target)
            assert indices[0] == 0
            assert all(b > a for a, b in zip(indices, indices[1:]))
            assert all(0 <= i < n for i in indices)
            step = fps / target
            for a, b in zip(indices, indices[1:]):
                assert abs((b - a) - step) <= 1


class TestUniformSampleExcludingFirst:
    def test_81_frames_4_samples(self):
        assert uniform_sample_excluding_first(81, 4) == [20, 40, 60, 80]

    def test_exactly_k_candidates(self):
        assert uniform_sample_excluding_first(5, 4) == [1, 2, 3, 4]

    def test_fewer_candidates_than_k(self):
        assert uniform_sample_excluding_first(3, 4) == [1, 2]

    def test_too_short(self):
        with pytest.raises(ValidationError):
            uniform_sample_excluding_first(1, 4)

    def test_never_zero_always_last(self, rng):
        for _ in range(300):
            n = int(rng.integers(2, 300))
            k = int(rng.integers(1, 10))
            indices = uniform_sample_excluding_first(n, k)
            assert 0 not in indices
            assert all(b > a for a, b in zip(indices, indices[1:]))
            if n - 1 >= k:
                assert len(indices) == k
                assert indices[-1] == n - 1
            else:
                assert indices == list(range(1, n))


class TestPngDir:
    def test_load_spec_example(self, tmp_path, rng):
        d = tmp_path / "frames"
        d.mkdir()
        for i in range(3):
            save_frame(
                Frame(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)),
                d / f"{i:06d}.png",
            )
        (d / "meta.txt").write_text("fps=8")
        clip = load_clip(d)
        assert clip.n_frames == 3
        assert (clip.width, clip.height) == (4, 4)
        assert clip.fps == 8

    def test_round_trip_bit_exact(self, tmp_path, rng):
        for trial in range(10):
            clip = random_clip(
                rng,
                n_frames=int(rng.integers(1, 5)),
                height=int(rng.integers(1, 9)),
                width=int(rng.integers(1, 9)),
                fps=Fraction(int(rng.integers(1, 31)), int(rng.integers(1, 3))),
            )
            path = tmp_path / f"clip{trial}"
            write_clip(clip, path)
            again = load_clip(path)
            assert again.fps == clip.fps
            assert again.n_frames == clip.n_frames
            for a, b in zip(again.frames, clip.frames):
                assert np.array_equal(a.pixels, b.pixels)

    def test_empty_directory(self, tmp_path):
        d = tmp_path / "empty"
        d.mkdir()
        with pytest.raises(ValidationError, match="no frames found"):
            load_clip(d)

    def test_missing_meta(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        save_frame(Frame(np.zeros((2, 2, 3), np.uint8)), d / "000000.png")
        with pytest.raises(ValidationError, match="meta.txt"):
            load_clip(d)

    def test_mixed_dimensions(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        save_frame(Frame(np.zeros((2, 2, 3), np.uint8)), d / "000000.png")
        save_frame(Frame(np.zeros((4, 2, 3), np.uint8)), d / "000001.png")
        (d / "meta.txt").write_text("fps=8/1")
        with pytest.raises(ValidationError, match="mixed frame dimensions"):
            load_clip(d)

    def test_unwritable_destination(self, tmp_path):
        # a regular file where a directory component should be
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        with pytest.raises(ValidationError, match="cannot write"):
            write_clip(gray_clip(), blocker / "clip")

    def test_overwrite_removes_stale_frames(self, tmp_path, rng):
        path = tmp_path / "clip"
        write_clip(random_clip(rng, n_frames=5), path)
        write_clip(random_clip(rng, n_frames=2), path)
        assert load_clip(path).n_frames == 2

    def test_single_frame_round_trip(self, tmp_path, rng):
        frame = Frame(rng.integers(0, 256, (5, 7, 3), dtype=np.uint8))
        save_frame(frame, tmp_path / "f.png")
        assert np.array_equal(load_frame(tmp_path / "f.png").pixels, frame.pixels)


def _bt601_420_oracle(pixels: np.ndarray) -> np.ndarray:
    """Independent float-precision forward + 4:2:0 + inverse reference."""
    r = pixels[..., 0].astype(float)
    g = pixels[..., 1].astype(float)
    b = pixels[..., 2].astype(float)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = 128 - 0.168736 * r - 0.331264 * g + 0.5 * b
    cr = 128 + 0.5 * r - 0.418688 * g - 0.081312 * b
    h, w = y.shape
    cb = cb.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)).repeat(2, 0).repeat(2, 1)
    cr = cr.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3)).repeat(2, 0).repeat(2, 1)
    out = np.stack(
        [
            y + 1.402 * (cr - 128),
            y - 0.344136 * (cb - 128) - 0.714136 * (cr - 128),
            y + 1.772 * (cb - 128),
        ],
        axis=-1,
    )
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class TestY4m:
    def test_header_example(self, tmp_path):
        path = tmp_path / "c.y4m"
        ysize, csize = 16 * 8, 8 * 4
        payload = b"FRAME\n" + bytes(ysize) + bytes(csize) * 2
        path.write_bytes(b"YUV4MPEG2 W16 H8 F8:1 Ip A1:1 C420\n" + payload)
        clip = load_clip(path)
        assert (clip.width, clip.height) == (16, 8)
        assert clip.fps == 8

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.y4m"
        path.write_bytes(b"NOTYUV W2 H2 F8:1\nFRAME\n" + bytes(6))
        with pytest.raises(ValidationError, match="magic"):
            load_clip(path)

    def test_unsupported_colorspace(self, tmp_path):
        path = tmp_path / "c.y4m"
        path.write_bytes(b"YUV4MPEG2 W2 H2 F8:1 C444\n")
        with pytest.raises(ValidationError, match="colorspace"):
            load_clip(path)

    def test_truncated_frame(self, tmp_path):
        path = tmp_path / "c.y4m"
        path.write_bytes(b"YUV4MPEG2 W4 H4 F8:1 C420\nFRAME\n" + bytes(10))
        with pytest.raises(ValidationError, match="truncated"):
            load_clip(path)

    def test_round_trip_chroma_flat(self, tmp_path, rng):
        # colors constant over 2x2 blocks make subsampling lossless;
        # only quantization remains
        coarse = rng.integers(0, 256, (4, 6, 3), dtype=np.uint8)
        pixels = coarse.repeat(2, axis=0).repeat(2, axis=1)
        clip = VideoClip([Frame(pixels)], 8)
        path = tmp_path / "c.y4m"
        write_clip(clip, path)
        again = load_clip(path)
        diff = np.abs(
            again.frames[0].pixels.astype(int) - pixels.astype(int)
        )
        assert diff.max() <= 2

    def test_round_trip_matches_oracle(self, tmp_path, rng):
        for trial in range(5):
            pixels = rng.integers(0, 256, (8, 12, 3), dtype=np.uint8)
            clip = VideoClip([Frame(pixels)] * 2, Fraction(30000, 1001))
            path = tmp_path / f"c{trial}.y4m"
            write_clip(clip, path)
            again = load_clip(path)
            assert again.fps == Fraction(30000, 1001)
            expected = _bt601_420_oracle(pixels)
            for frame in again.frames:
                diff = np.abs(frame.pixels.astype(int) - expected.astype(int))
                assert diff.max() <= 2

    def test_odd_dimensions_rejected(self, tmp_path):
        clip = VideoClip([Frame(np.zeros((3, 4, 3), np.uint8))], 8)
        with pytest.raises(ValidationError, match="even"):
            write_clip(clip, tmp_path / "c.y4m")


class TestColorConversion:
    def test_inverse_of_forward_within_rounding(self, rng):
        pixels = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
        y, cb, cr = rgb_to_ycbcr(pixels)
        back = ycbcr_to_rgb(y, cb, cr)
        assert np.abs(back.astype(int) - pixels.astype(int)).max() <= 1
