"""Batch pipeline and benchmark tooling for video background replacement."""

from .errors import SparkleError, ValidationError, WorkerError
from .media import Frame, VideoClip, load_clip, write_clip
from .masks import MaskVideo

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "MaskVideo",
    "SparkleError",
    "ValidationError",
    "VideoClip",
    "WorkerError",
    "load_clip",
    "write_clip",
    "__version__",
]
