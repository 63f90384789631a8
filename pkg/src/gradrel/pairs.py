"""Binarization of aggregated relevances and positive-pair construction.

Three rules turn the high-graded C15 clips of each caption into BiCrRel
positives:

    1. the caption with each of its high-graded clips;
    2. the caption's source (TP) clip with every caption authored for those
       high-graded clips;
    3. the caption's sibling captions (same source clip) with its high-graded
       clips.

BiRel is the captioning-based baseline subset: authored (clip, caption) pairs
whose clip or caption appears in BiCrRel. Every combination of a pair set's
clip and caption universes that is not a positive is implicitly negative;
negatives are never materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from gradrel.aggregate import AggregatedRelevance
from gradrel.catalog import Catalog, Role
from gradrel.errors import DataError
from gradrel.io import artifact_header, dump_json_line, read_jsonl, write_artifact

BICRREL = "BiCrRel"
BIREL = "BiRel"
UNION = "BiCrRel+BiRel"


@dataclass(frozen=True, slots=True)
class HighGradedSet:
    """Per caption, the C15 clips whose aggregated score strictly exceeds
    the threshold."""

    threshold: float
    by_caption: dict[str, frozenset[str]]

    def clips_of(self, caption_id: str) -> frozenset[str]:
        return self.by_caption.get(caption_id, frozenset())


@dataclass(frozen=True, slots=True)
class PairSet:
    name: str
    split: str
    positives: frozenset[tuple[str, str]]  # (clip_id, caption_id)
    clip_universe: frozenset[str]
    caption_universe: frozenset[str]

    def __post_init__(self) -> None:
        for clip_id, caption_id in self.positives:
            if clip_id not in self.clip_universe or caption_id not in self.caption_universe:
                raise ValueError(
                    f"positive pair ({clip_id!r}, {caption_id!r}) outside the universes"
                )

    def relevant_clips(self, caption_id: str) -> set[str]:
        return {c for c, q in self.positives if q == caption_id}


def binarize(aggregated: list[AggregatedRelevance], threshold: float) -> HighGradedSet:
    """Select, per caption, the C15 clips with agg_score strictly above the
    threshold. TP and TN rows never enter the set."""
    if not 0 <= threshold <= 100:
        raise DataError(f"threshold must be in [0, 100], got {threshold}")
    by_caption: dict[str, set[str]] = {}
    for row in aggregated:
        if row.role is Role.C15 and row.agg_score > threshold:
            by_caption.setdefault(row.caption_id, set()).add(row.clip_id)
    return HighGradedSet(
        threshold=threshold,
        by_caption={q: frozenset(clips) for q, clips in by_caption.items()},
    )


def _split_of_captions(catalog: Catalog, caption_ids: set[str]) -> str:
    splits = {catalog.caption_by_id[q].split for q in caption_ids}
    if len(splits) > 1:
        raise DataError(f"captions span multiple splits: {sorted(splits)}")
    return splits.pop() if splits else "development"


def build_bicrrel(hg: HighGradedSet, catalog: Catalog) -> PairSet:
    """Apply the three positive-pair rules and deduplicate.

    Raises DataError when a caption or clip referenced by the high-graded set
    is not resolvable in the catalog.
    """
    for caption_id in hg.by_caption:
        if caption_id not in catalog.caption_by_id:
            raise DataError(f"high-graded set references unknown caption {caption_id!r}")
        for clip_id in hg.by_caption[caption_id]:
            if clip_id not in catalog.clip_by_id:
                raise DataError(f"high-graded set references unknown clip {clip_id!r}")

    positives: set[tuple[str, str]] = set()
    for caption_id in sorted(hg.by_caption):
        caption = catalog.caption_by_id[caption_id]
        tp_clip = caption.source_clip_id
        high = sorted(hg.by_caption[caption_id])
        for clip_id in high:
            positives.add((clip_id, caption_id))                      # rule 1
            for authored in catalog.captions_of_clip(clip_id):
                positives.add((tp_clip, authored.caption_id))         # rule 2
            for sibling in catalog.siblings(caption_id):
                positives.add((clip_id, sibling.caption_id))          # rule 3

    split = _split_of_captions(catalog, set(hg.by_caption))
    return PairSet(
        name=BICRREL,
        split=split,
        positives=frozenset(positives),
        clip_universe=frozenset(c for c, _ in positives),
        caption_universe=frozenset(q for _, q in positives),
    )


def build_birel(bicrrel: PairSet, catalog: Catalog) -> PairSet:
    """Captioning-based baseline: authored (clip, caption) pairs whose clip
    or caption appears in BiCrRel; universes restricted to the result."""
    positives: set[tuple[str, str]] = set()
    for cap in catalog.captions:
        if cap.split != bicrrel.split:
            continue
        pair = (cap.source_clip_id, cap.caption_id)
        if pair[0] in bicrrel.clip_universe or pair[1] in bicrrel.caption_universe:
            positives.add(pair)
    return PairSet(
        name=BIREL,
        split=bicrrel.split,
        positives=frozenset(positives),
        clip_universe=frozenset(c for c, _ in positives),
        caption_universe=frozenset(q for _, q in positives),
    )


def union_pairs(a: PairSet, b: PairSet) -> PairSet:
    if a.split != b.split:
        raise DataError(f"cannot union pair sets from splits {a.split!r} and {b.split!r}")
    name = UNION if {a.name, b.name} == {BICRREL, BIREL} else f"{a.name}+{b.name}"
    return PairSet(
        name=name,
        split=a.split,
        positives=a.positives | b.positives,
        clip_universe=a.clip_universe | b.clip_universe,
        caption_universe=a.caption_universe | b.caption_universe,
    )


# --- pairs file (JSON lines, one record per positive pair) ---

def write_pairs_file(path: str | Path, pairset: PairSet,
                     seed: int | None = None,
                     inputs: tuple[str | Path, ...] = ()) -> None:
    lines = [
        dump_json_line({
            "name": pairset.name,
            "split": pairset.split,
            "clip_id": clip_id,
            "caption_id": caption_id,
        })
        for clip_id, caption_id in sorted(pairset.positives)
    ]
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def read_pairs_file(path: str | Path) -> PairSet:
    names: set[str] = set()
    splits: set[str] = set()
    positives: set[tuple[str, str]] = set()
    for rec in read_jsonl(path):
        try:
            names.add(rec["name"])
            splits.add(rec["split"])
            positives.add((rec["clip_id"], rec["caption_id"]))
        except KeyError as exc:
            raise DataError(f"{path}: malformed pair record: {exc}") from exc
    if len(names) > 1 or len(splits) > 1:
        raise DataError(f"{path}: mixed pair-set names or splits")
    if not positives:
        raise DataError(f"{path}: empty pair set")
    return PairSet(
        name=names.pop(),
        split=splits.pop(),
        positives=frozenset(positives),
        clip_universe=frozenset(c for c, _ in positives),
        caption_universe=frozenset(q for _, q in positives),
    )
