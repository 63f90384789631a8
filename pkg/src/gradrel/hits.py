"""Candidate selection and HIT assembly.

For each caption we pick 17 distinct clips from its split: the authored source
clip (TP), the clip with the lowest similarity estimate (TN, pending a manual
verification flag), and 15 relevance-unknown candidates (C15) made of the top
five clips by similarity plus ten uniform-random clips. The 15 candidates are
split into five batches of three; each of the five HITs carries TP + TN + one
batch, shuffled into a display order that hides the roles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from gradrel.catalog import Catalog, Role
from gradrel.errors import DataError
from gradrel.io import artifact_header, dump_json_line, read_jsonl, write_artifact
from gradrel.seeding import derived_rng

TOP_K_DEFAULT = 5
RANDOM_K_DEFAULT = 10
C15_PER_CAPTION = 15
BATCHES_PER_CAPTION = 5
CLIPS_PER_HIT = 5


@dataclass(frozen=True, slots=True)
class CandidateSet:
    caption_id: str
    tp_clip: str
    tn_clip: str
    c15: tuple[str, ...]
    tn_verified: bool = False

    def __post_init__(self) -> None:
        if len(self.c15) != C15_PER_CAPTION:
            raise ValueError(f"c15 must have {C15_PER_CAPTION} clips, got {len(self.c15)}")
        all_ids = {self.tp_clip, self.tn_clip, *self.c15}
        if len(all_ids) != 2 + C15_PER_CAPTION:
            raise ValueError("tp, tn and c15 clips must be 17 distinct ids")


@dataclass(frozen=True, slots=True)
class HitClip:
    clip_id: str
    role: Role


@dataclass(frozen=True, slots=True)
class Hit:
    """One annotation task: a caption plus five clips in display order."""

    hit_id: str
    caption_id: str
    batch_index: int  # 1..5
    clips: tuple[HitClip, ...]

    def __post_init__(self) -> None:
        if len(self.clips) != CLIPS_PER_HIT:
            raise ValueError(f"a HIT carries exactly {CLIPS_PER_HIT} clips")
        roles = [c.role for c in self.clips]
        if roles.count(Role.TP) != 1 or roles.count(Role.TN) != 1 or roles.count(Role.C15) != 3:
            raise ValueError("a HIT carries exactly one TP, one TN and three C15 clips")

    @property
    def roles_by_clip(self) -> dict[str, Role]:
        return {c.clip_id: c.role for c in self.clips}

    def clips_with_role(self, role: Role) -> list[str]:
        return [c.clip_id for c in self.clips if c.role is role]


@dataclass(frozen=True, slots=True)
class AssignmentPlan:
    """Target redundancy per HIT; each worker receives a HIT at most once."""

    redundancy: int = 5

    def __post_init__(self) -> None:
        if self.redundancy < 1:
            raise ValueError(f"redundancy must be >= 1, got {self.redundancy}")


def select_candidates(
    catalog: Catalog,
    caption_id: str,
    seed: int,
    top_k: int = TOP_K_DEFAULT,
    random_k: int = RANDOM_K_DEFAULT,
) -> CandidateSet:
    """Pick TP, TN and the c15 list for one caption.

    TP is the caption's source clip. TN is the within-split clip with the
    lowest similarity (ties broken by smallest clip_id); it starts unverified.
    The c15 list is the top ``top_k`` clips by similarity (ties by clip_id,
    excluding TP and TN) followed by ``random_k`` uniform-random distinct
    clips from the remainder. The random draw depends only on (seed,
    caption_id); changing the seed changes at most those random clips.
    """
    if top_k + random_k != C15_PER_CAPTION:
        raise ValueError(f"top_k + random_k must be {C15_PER_CAPTION}")
    caption = catalog.caption_by_id.get(caption_id)
    if caption is None:
        raise DataError(f"unknown caption {caption_id!r}")
    tp = caption.source_clip_id
    pool = [c.clip_id for c in catalog.clips_in_split(caption.split)]
    if len(pool) < 2 + C15_PER_CAPTION:
        raise DataError(
            f"caption {caption_id!r}: candidate pool has {len(pool)} clips, "
            f"need at least {2 + C15_PER_CAPTION}"
        )
    others = [cid for cid in pool if cid != tp]
    missing = [cid for cid in others if (caption_id, cid) not in catalog.similarity]
    if missing:
        raise DataError(
            f"caption {caption_id!r}: missing similarity entries for "
            f"{len(missing)} clips (first: {missing[0]!r})"
        )
    sim = {cid: catalog.similarity[(caption_id, cid)] for cid in others}

    tn = min(others, key=lambda cid: (sim[cid], cid))
    remaining = [cid for cid in others if cid != tn]
    top = sorted(remaining, key=lambda cid: (-sim[cid], cid))[:top_k]
    rest = sorted(set(remaining) - set(top))
    rng = derived_rng(seed, "select", caption_id)
    random_pick = [rest[i] for i in rng.choice(len(rest), size=random_k, replace=False)]
    return CandidateSet(
        caption_id=caption_id,
        tp_clip=tp,
        tn_clip=tn,
        c15=tuple(top) + tuple(random_pick),
    )


def verify_tn(cs: CandidateSet) -> CandidateSet:
    """Record the manual confirmation that the TN clip is fully irrelevant."""
    return replace(cs, tn_verified=True)


def build_hits(cs: CandidateSet, seed: int) -> list[Hit]:
    """Partition the c15 list into five order-preserving batches of three and
    wrap each batch with TP and TN into a HIT.

    Within-HIT display order is a seeded shuffle so the role of a clip is not
    inferable from its position. Deterministic given (cs, seed).
    """
    hits = []
    for batch_index in range(1, BATCHES_PER_CAPTION + 1):
        start = (batch_index - 1) * 3
        batch = cs.c15[start:start + 3]
        clips = [
            HitClip(cs.tp_clip, Role.TP),
            HitClip(cs.tn_clip, Role.TN),
            *(HitClip(cid, Role.C15) for cid in batch),
        ]
        rng = derived_rng(seed, "shuffle", cs.caption_id, batch_index)
        order = rng.permutation(CLIPS_PER_HIT)
        hits.append(Hit(
            hit_id=f"{cs.caption_id}-h{batch_index}",
            caption_id=cs.caption_id,
            batch_index=batch_index,
            clips=tuple(clips[i] for i in order),
        ))
    return hits


def plan_assignments(hits: list[Hit], redundancy: int) -> AssignmentPlan:
    if redundancy < 1:
        raise ValueError(f"redundancy must be >= 1, got {redundancy}")
    return AssignmentPlan(redundancy=redundancy)


# --- candidates file (JSON lines, one record per caption) ---

def write_candidates_file(path: str | Path, sets: list[CandidateSet], seed: int | None,
                          inputs: tuple[str | Path, ...] = ()) -> None:
    lines = [
        dump_json_line({
            "caption_id": cs.caption_id,
            "tp_clip": cs.tp_clip,
            "tn_clip": cs.tn_clip,
            "tn_verified": cs.tn_verified,
            "c15": list(cs.c15),
        })
        for cs in sets
    ]
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def read_candidates_file(path: str | Path) -> list[CandidateSet]:
    sets = []
    for rec in read_jsonl(path):
        try:
            sets.append(CandidateSet(
                caption_id=rec["caption_id"],
                tp_clip=rec["tp_clip"],
                tn_clip=rec["tn_clip"],
                tn_verified=bool(rec["tn_verified"]),
                c15=tuple(rec["c15"]),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: malformed candidate record: {exc}") from exc
    return sets


# --- hits file (JSON lines, one record per HIT) ---

def write_hits_file(path: str | Path, hits: list[Hit], seed: int | None,
                    inputs: tuple[str | Path, ...] = ()) -> None:
    lines = []
    for hit in hits:
        lines.append(dump_json_line({
            "hit_id": hit.hit_id,
            "caption_id": hit.caption_id,
            "batch_index": hit.batch_index,
            "clips": [
                {"clip_id": c.clip_id, "role": c.role.value, "display_position": i}
                for i, c in enumerate(hit.clips)
            ],
        }))
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def read_hits_file(path: str | Path) -> list[Hit]:
    hits = []
    for record in read_jsonl(path):
        try:
            clips = sorted(record["clips"], key=lambda c: c["display_position"])
            hits.append(Hit(
                hit_id=record["hit_id"],
                caption_id=record["caption_id"],
                batch_index=int(record["batch_index"]),
                clips=tuple(HitClip(c["clip_id"], Role(c["role"])) for c in clips),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: malformed HIT record: {exc}") from exc
    return hits


def index_hits(hits: list[Hit]) -> dict[str, Hit]:
    index = {}
    for hit in hits:
        if hit.hit_id in index:
            raise DataError(f"duplicate hit_id {hit.hit_id!r}")
        index[hit.hit_id] = hit
    return index
