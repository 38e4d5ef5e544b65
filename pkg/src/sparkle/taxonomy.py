"""The theme / subtheme / scene hierarchy for editing prompts.

The hierarchy ships as package data. It also drives the benchmark
manifest generator: each scene contributes a fixed number of videos
(4 for Location, 5 elsewhere), which yields the 458-video benchmark
layout.
"""

from __future__ import annotations

import json
from importlib import resources

from .errors import ValidationError
from .manifest import DONE, STAGES, ManifestRecord

THEME_ORDER = ("Location", "Season", "Time", "Style")


def load_taxonomy() -> dict:
    """The raw hierarchy: {"themes": [{name, videos_per_scene, subthemes}]}."""
    data = resources.files("sparkle").joinpath("taxonomy.json").read_text()
    return json.loads(data)


def theme_sort_key(theme: str):
    """Canonical theme order; unknown themes sort after, alphabetically."""
    try:
        return (0, THEME_ORDER.index(theme))
    except ValueError:
        return (1, theme)


def benchmark_records(taxonomy: dict | None = None) -> list[ManifestRecord]:
    """One fully-processed manifest record per benchmark video.

    Walks every scene of the hierarchy and emits ``videos_per_scene``
    records for it, all with stages 1-5 done.
    """
    taxonomy = taxonomy or load_taxonomy()
    records = []
    for theme in taxonomy["themes"]:
        per_scene = int(theme["videos_per_scene"])
        if per_scene < 1:
            raise ValidationError(f"theme {theme['name']!r}: bad videos_per_scene")
        for subtheme in theme["subthemes"]:
            for scene in subtheme["scenes"]:
                for k in range(per_scene):
                    slug = (
                        f"{theme['name']}-{subtheme['name']}-{scene}".replace(" ", "_")
                    )
                    record = ManifestRecord(
                        clip_id=f"{slug}-{k:02d}",
                        source_path=f"clips/{slug}-{k:02d}",
                        theme=theme["name"],
                        subtheme=subtheme["name"],
                        scene=scene,
                        edit_prompt=f"Replace the background with {scene}",
                        background_caption=scene,
                        stage_status={str(s): DONE for s in STAGES},
                    )
                    records.append(record)
    return records
