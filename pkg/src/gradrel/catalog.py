"""Domain types and catalog ingestion shared by all pipeline stages.

A catalog holds audio clips, their authored captions (Clotho-style: captions
are written for one specific clip, at most five per clip), and an optional
similarity table produced by some upstream retrieval baseline. All objects
are immutable after construction and safe to share across threads.

Catalog tables are UTF-8 CSV with a header row:

    clips:      clip_id, split, duration_s, media_path
    captions:   caption_id, split, text, source_clip_id
    similarity: caption_id, clip_id, score
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from gradrel.errors import DataError

SPLITS = ("development", "validation", "evaluation")

MAX_CAPTIONS_PER_CLIP = 5


class Role(str, enum.Enum):
    """Role of a clip inside a HIT: planted true positive, planted (verified)
    true negative, or one of the fifteen relevance-unknown candidates."""

    TP = "TP"
    TN = "TN"
    C15 = "C15"


@dataclass(frozen=True, slots=True)
class AudioClip:
    clip_id: str
    split: str
    duration_s: float
    media_path: str | None = None


@dataclass(frozen=True, slots=True)
class CaptionItem:
    caption_id: str
    split: str
    text: str
    source_clip_id: str


@dataclass(frozen=True, slots=True)
class Finding:
    """One validation problem. ``subject`` names the offending id."""

    code: str
    subject: str
    message: str


@dataclass(frozen=True, slots=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def ok(self) -> bool:
        return not self.findings


@dataclass(frozen=True)
class Catalog:
    """Immutable clip/caption catalog with optional similarity estimates.

    ``similarity`` maps (caption_id, clip_id) to a real-valued score; it is
    optional because pipelines starting from already-built HITs never touch it.
    """

    clips: tuple[AudioClip, ...]
    captions: tuple[CaptionItem, ...]
    similarity: dict[tuple[str, str], float] = field(default_factory=dict)

    @cached_property
    def clip_by_id(self) -> dict[str, AudioClip]:
        return {c.clip_id: c for c in self.clips}

    @cached_property
    def caption_by_id(self) -> dict[str, CaptionItem]:
        return {c.caption_id: c for c in self.captions}

    @cached_property
    def _captions_by_clip(self) -> dict[str, tuple[CaptionItem, ...]]:
        grouped: dict[str, list[CaptionItem]] = {}
        for cap in self.captions:
            grouped.setdefault(cap.source_clip_id, []).append(cap)
        return {
            cid: tuple(sorted(caps, key=lambda c: c.caption_id))
            for cid, caps in grouped.items()
        }

    def clips_in_split(self, split: str) -> list[AudioClip]:
        return sorted(
            (c for c in self.clips if c.split == split),
            key=lambda c: c.clip_id,
        )

    def captions_in_split(self, split: str) -> list[CaptionItem]:
        return sorted(
            (c for c in self.captions if c.split == split),
            key=lambda c: c.caption_id,
        )

    def captions_of_clip(self, clip_id: str) -> list[CaptionItem]:
        """Captions authored for the given clip, ordered by caption_id."""
        return list(self._captions_by_clip.get(clip_id, ()))

    def siblings(self, caption_id: str) -> list[CaptionItem]:
        """Other captions authored for the same source clip."""
        cap = self.caption_by_id[caption_id]
        return [
            c for c in self.captions_of_clip(cap.source_clip_id)
            if c.caption_id != caption_id
        ]


def _read_table(path: str | Path, expected_columns: tuple[str, ...]) -> list[dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = [row for row in csv.reader(f) if row and not row[0].startswith("#")]
    except OSError as exc:
        raise DataError(f"cannot read table {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty table, expected header {expected_columns}")
    header = tuple(h.strip() for h in rows[0])
    if header != expected_columns:
        raise DataError(f"{path}: header {header} does not match {expected_columns}")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(expected_columns):
            raise DataError(f"{path}:{lineno}: expected {len(expected_columns)} fields, got {len(row)}")
        out.append(dict(zip(expected_columns, row)))
    return out


def load_catalog(
    clip_table: str | Path,
    caption_table: str | Path,
    similarity_table: str | Path | None = None,
) -> Catalog:
    """Load and fully validate a catalog from CSV tables.

    Pure function of file content: identical bytes yield an identical catalog
    regardless of row order. Raises DataError on malformed rows, duplicate
    ids, or dangling references (e.g. a caption naming an absent clip).
    """
    clips: list[AudioClip] = []
    seen_clips: set[str] = set()
    for row in _read_table(clip_table, ("clip_id", "split", "duration_s", "media_path")):
        cid = row["clip_id"]
        if cid in seen_clips:
            raise DataError(f"duplicate clip_id {cid!r}")
        seen_clips.add(cid)
        try:
            duration = float(row["duration_s"])
        except ValueError as exc:
            raise DataError(f"clip {cid!r}: bad duration_s {row['duration_s']!r}") from exc
        clips.append(AudioClip(
            clip_id=cid,
            split=row["split"],
            duration_s=duration,
            media_path=row["media_path"] or None,
        ))

    captions: list[CaptionItem] = []
    seen_captions: set[str] = set()
    for row in _read_table(caption_table, ("caption_id", "split", "text", "source_clip_id")):
        qid = row["caption_id"]
        if qid in seen_captions:
            raise DataError(f"duplicate caption_id {qid!r}")
        seen_captions.add(qid)
        if row["source_clip_id"] not in seen_clips:
            raise DataError(
                f"caption {qid!r}: dangling reference to missing clip {row['source_clip_id']!r}"
            )
        captions.append(CaptionItem(
            caption_id=qid,
            split=row["split"],
            text=row["text"],
            source_clip_id=row["source_clip_id"],
        ))

    similarity: dict[tuple[str, str], float] = {}
    if similarity_table is not None:
        for row in _read_table(similarity_table, ("caption_id", "clip_id", "score")):
            key = (row["caption_id"], row["clip_id"])
            if row["caption_id"] not in seen_captions:
                raise DataError(f"similarity row references missing caption {row['caption_id']!r}")
            if row["clip_id"] not in seen_clips:
                raise DataError(f"similarity row references missing clip {row['clip_id']!r}")
            if key in similarity:
                raise DataError(f"duplicate similarity entry for {key}")
            try:
                similarity[key] = float(row["score"])
            except ValueError as exc:
                raise DataError(f"similarity {key}: bad score {row['score']!r}") from exc

    # Rows are sorted so the catalog is a pure function of file *content*,
    # independent of row order.
    catalog = Catalog(
        clips=tuple(sorted(clips, key=lambda c: c.clip_id)),
        captions=tuple(sorted(captions, key=lambda c: c.caption_id)),
        similarity=similarity,
    )
    report = validate_catalog(catalog)
    if not report.ok:
        first = report.findings[0]
        raise DataError(f"{first.code} ({first.subject}): {first.message}")
    return catalog


def validate_catalog(catalog: Catalog) -> ValidationReport:
    """Check every catalog invariant; findings are data, not failures.

    Findings are deterministically ordered by (code, subject, message).
    """
    findings: list[Finding] = []

    seen_clips: set[str] = set()
    for clip in catalog.clips:
        if clip.clip_id in seen_clips:
            findings.append(Finding("duplicate-clip-id", clip.clip_id, "clip_id occurs twice"))
        seen_clips.add(clip.clip_id)
        if clip.duration_s <= 0:
            findings.append(Finding("nonpositive-duration", clip.clip_id,
                                    f"duration_s={clip.duration_s}"))
        if clip.split not in SPLITS:
            findings.append(Finding("unknown-split", clip.clip_id, f"split={clip.split!r}"))

    seen_captions: set[str] = set()
    captions_per_clip: dict[str, int] = {}
    for cap in catalog.captions:
        if cap.caption_id in seen_captions:
            findings.append(Finding("duplicate-caption-id", cap.caption_id,
                                    "caption_id occurs twice"))
        seen_captions.add(cap.caption_id)
        if not cap.text:
            findings.append(Finding("empty-caption-text", cap.caption_id, "text is empty"))
        if cap.split not in SPLITS:
            findings.append(Finding("unknown-split", cap.caption_id, f"split={cap.split!r}"))
        if cap.source_clip_id not in seen_clips:
            findings.append(Finding("dangling-source-clip", cap.caption_id,
                                    f"references missing clip {cap.source_clip_id!r}"))
        else:
            captions_per_clip[cap.source_clip_id] = captions_per_clip.get(cap.source_clip_id, 0) + 1
            src = catalog.clip_by_id[cap.source_clip_id]
            if src.split != cap.split:
                findings.append(Finding("split-mismatch", cap.caption_id,
                                        f"caption split {cap.split!r} != clip split {src.split!r}"))

    for clip_id in sorted(captions_per_clip):
        count = captions_per_clip[clip_id]
        if count > MAX_CAPTIONS_PER_CLIP:
            findings.append(Finding("caption-count", clip_id,
                                    f"caption count exceeds {MAX_CAPTIONS_PER_CLIP} (got {count})"))

    for (caption_id, clip_id) in catalog.similarity:
        if caption_id not in seen_captions:
            findings.append(Finding("dangling-similarity-caption", caption_id,
                                    "similarity row references missing caption"))
        if clip_id not in seen_clips:
            findings.append(Finding("dangling-similarity-clip", clip_id,
                                    "similarity row references missing clip"))

    findings.sort(key=lambda f: (f.code, f.subject, f.message))
    return ValidationReport(findings=tuple(findings))
