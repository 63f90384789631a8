"""The answers file: one JSON record per completed assignment.

Both the annotation service export and the synthetic worker generator emit
this format, and every downstream stage reads it. Each record carries the
five clip scores keyed by clip_id together with the clip roles, so consumers
can resolve the role-specific scores (TP, TN, and the three C15s) without
reopening the hits file; the hits file remains the authoritative join source.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from gradrel.catalog import Role
from gradrel.errors import DataError
from gradrel.hits import Hit
from gradrel.io import artifact_header, dump_json_line, read_jsonl, write_artifact

SCORE_MIN = 0
SCORE_MAX = 100


@dataclass(frozen=True, slots=True)
class AnswerRecord:
    assignment_id: str
    hit_id: str
    caption_id: str
    worker_id: str
    split: str
    submitted_at: str
    scores: dict[str, int]  # clip_id -> integer in [0, 100]
    roles: dict[str, str]   # clip_id -> role value


@dataclass(frozen=True, slots=True)
class RoleScores:
    """One answer's scores resolved by role; C15 scores in batch order."""

    s_tp: int
    s_tn: int
    s_c: tuple[int, int, int]


def resolve_roles(record: AnswerRecord, hit: Hit) -> RoleScores:
    """Join an answer against its HIT's role tags.

    Raises DataError when the answer's clip set does not match the HIT.
    """
    if set(record.scores) != {c.clip_id for c in hit.clips}:
        raise DataError(
            f"answer {record.assignment_id!r}: scored clips do not match HIT {hit.hit_id!r}"
        )
    roles = hit.roles_by_clip
    tp = [cid for cid, r in roles.items() if r is Role.TP][0]
    tn = [cid for cid, r in roles.items() if r is Role.TN][0]
    c15 = hit.clips_with_role(Role.C15)
    return RoleScores(
        s_tp=record.scores[tp],
        s_tn=record.scores[tn],
        s_c=tuple(record.scores[cid] for cid in c15),  # type: ignore[arg-type]
    )


def validate_scores(scores: dict[str, int], expected_clips: set[str]) -> None:
    if set(scores) != expected_clips:
        missing = expected_clips - set(scores)
        extra = set(scores) - expected_clips
        raise DataError(f"scores must cover exactly the HIT clips (missing={sorted(missing)}, extra={sorted(extra)})")
    for clip_id, score in scores.items():
        if not isinstance(score, int) or isinstance(score, bool):
            raise DataError(f"score for {clip_id!r} must be an integer, got {score!r}")
        if not SCORE_MIN <= score <= SCORE_MAX:
            raise DataError(f"score for {clip_id!r} out of [{SCORE_MIN}, {SCORE_MAX}]: {score}")


def write_answers_file(path: str | Path, records: list[AnswerRecord],
                       seed: int | None = None,
                       inputs: tuple[str | Path, ...] = ()) -> None:
    lines = [
        dump_json_line({
            "assignment_id": r.assignment_id,
            "hit_id": r.hit_id,
            "caption_id": r.caption_id,
            "worker_id": r.worker_id,
            "split": r.split,
            "submitted_at": r.submitted_at,
            "scores": r.scores,
            "roles": r.roles,
        })
        for r in records
    ]
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def read_answers_file(path: str | Path) -> list[AnswerRecord]:
    records = []
    for rec in read_jsonl(path):
        try:
            records.append(AnswerRecord(
                assignment_id=rec["assignment_id"],
                hit_id=rec["hit_id"],
                caption_id=rec["caption_id"],
                worker_id=rec["worker_id"],
                split=rec["split"],
                submitted_at=rec["submitted_at"],
                scores={k: int(v) for k, v in rec["scores"].items()},
                roles={k: str(v) for k, v in rec.get("roles", {}).items()},
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{path}: malformed answer record: {exc}") from exc
    return records
