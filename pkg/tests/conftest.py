from __future__ import annotations

import numpy as np
import pytest

from sparkle.media import Frame, VideoClip


@pytest.fixture
def rng():
    return np.random.default_rng(20240901)


@pytest.fixture
def textured_frame(rng):
    return Frame(rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))


def random_clip(rng, n_frames=3, height=6, width=8, fps=4) -> VideoClip:
    frames = [
        Frame(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))
        for _ in range(n_frames)
    ]
    return VideoClip(frames, fps)
