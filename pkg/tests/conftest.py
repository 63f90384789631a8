from __future__ import annotations

import csv
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gradrel.catalog import AudioClip, CaptionItem, Catalog


def build_catalog(clips, captions, similarity=None) -> Catalog:
    """clips: [(clip_id, split)], captions: [(caption_id, split, source_clip_id)]."""
    return Catalog(
        clips=tuple(AudioClip(cid, split, duration_s=10.0, media_path=None)
                    for cid, split in clips),
        captions=tuple(CaptionItem(qid, split, text=f"sound of {qid}", source_clip_id=src)
                       for qid, split, src in captions),
        similarity=dict(similarity or {}),
    )


@pytest.fixture
def micro_catalog() -> Catalog:
    """One caption q (source a_q) with one sibling; one other clip c carrying
    two authored captions. The fixture used by the pair-rule tests."""
    return build_catalog(
        clips=[("a_q", "development"), ("c", "development")],
        captions=[
            ("q", "development", "a_q"),
            ("sib", "development", "a_q"),
            ("cap1", "development", "c"),
            ("cap2", "development", "c"),
        ],
    )


def write_catalog_files(tmp_path: Path, clips, captions, similarity=None):
    """Write CSV catalog tables; rows given as tuples matching the schemas."""
    clips_path = tmp_path / "clips.csv"
    captions_path = tmp_path / "captions.csv"
    with open(clips_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["clip_id", "split", "duration_s", "media_path"])
        w.writerows(clips)
    with open(captions_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["caption_id", "split", "text", "source_clip_id"])
        w.writerows(captions)
    sim_path = None
    if similarity is not None:
        sim_path = tmp_path / "similarity.csv"
        with open(sim_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["caption_id", "clip_id", "score"])
            w.writerows(similarity)
    return clips_path, captions_path, sim_path
