"""Robust per-(caption, clip) aggregation and score-distribution reporting.

Aggregation discards exactly one maximal and one minimal raw score and
averages the rest. Groups of one or two scores (where trimming is undefined)
fall back to the plain mean. The result is permutation-invariant, bounded by
the raw min/max, and monotone in every raw score.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from gradrel.answers import AnswerRecord
from gradrel.catalog import Role
from gradrel.errors import DataError
from gradrel.hits import Hit, index_hits
from gradrel.io import artifact_header, dump_json_line, read_jsonl, write_artifact


@dataclass(frozen=True, slots=True)
class AggregatedRelevance:
    caption_id: str
    clip_id: str
    role: Role
    raw_scores: tuple[int, ...]  # sorted ascending
    agg_score: float

    @property
    def n_raw(self) -> int:
        return len(self.raw_scores)


def trimmed_mean(scores: list[int] | tuple[int, ...]) -> float:
    """Drop one max and one min, average the rest; plain mean below 3 scores.

    With duplicated extremes only one occurrence of each is discarded, so
    {100, 100, 0} aggregates to 100.
    """
    if not scores:
        raise DataError("cannot aggregate an empty score group")
    if len(scores) <= 2:
        return sum(scores) / len(scores)
    ordered = sorted(scores)
    trimmed = ordered[1:-1]
    return sum(trimmed) / len(trimmed)


def aggregate_scores(
    retained_answers: list[AnswerRecord],
    hits: list[Hit],
) -> list[AggregatedRelevance]:
    """Group retained answers by (caption, clip) and apply the trimmed mean.

    Rows come back sorted by (caption_id, clip_id); the result depends only
    on the multiset of scores per group, never on input order.
    """
    hit_index = index_hits(hits)
    groups: dict[tuple[str, str], list[int]] = {}
    roles: dict[tuple[str, str], Role] = {}
    for record in retained_answers:
        hit = hit_index.get(record.hit_id)
        if hit is None:
            raise DataError(f"answer {record.assignment_id!r}: unknown hit_id {record.hit_id!r}")
        for clip in hit.clips:
            key = (hit.caption_id, clip.clip_id)
            seen = roles.get(key)
            if seen is not None and seen is not clip.role:
                raise DataError(
                    f"conflicting roles for caption {key[0]!r} / clip {key[1]!r}: "
                    f"{seen.value} vs {clip.role.value}"
                )
            roles[key] = clip.role
            groups.setdefault(key, []).append(record.scores[clip.clip_id])

    return [
        AggregatedRelevance(
            caption_id=caption_id,
            clip_id=clip_id,
            role=roles[(caption_id, clip_id)],
            raw_scores=tuple(sorted(groups[(caption_id, clip_id)])),
            agg_score=trimmed_mean(groups[(caption_id, clip_id)]),
        )
        for caption_id, clip_id in sorted(groups)
    ]


@dataclass(frozen=True, slots=True)
class Histogram:
    """Counts of scores over [0, 100]; the value 100 falls in the top bin."""

    role: str  # role value or "all"
    bin_width: int
    bins: tuple[int, ...]
    total: int
    share_eq_0: float
    share_eq_100: float
    share_lt_20: float
    share_gt_10: float
    share_gt_threshold: float | None = None
    threshold: float | None = None


def distribution_report(
    scores: list[float] | list[int],
    role: str = "all",
    bin_width: int = 10,
    threshold: float | None = None,
) -> Histogram:
    """Bin scores and compute the headline fractions of the distribution."""
    if bin_width <= 0 or 100 % bin_width != 0:
        raise DataError(f"bin_width must divide 100, got {bin_width}")
    n_bins = 100 // bin_width
    bins = [0] * n_bins
    for s in scores:
        if not 0 <= s <= 100:
            raise DataError(f"score out of [0, 100]: {s}")
        bins[min(int(s // bin_width), n_bins - 1)] += 1
    total = len(scores)

    def share(predicate) -> float:
        if total == 0:
            return 0.0
        return sum(1 for s in scores if predicate(s)) / total

    return Histogram(
        role=role,
        bin_width=bin_width,
        bins=tuple(bins),
        total=total,
        share_eq_0=share(lambda s: s == 0),
        share_eq_100=share(lambda s: s == 100),
        share_lt_20=share(lambda s: s < 20),
        share_gt_10=share(lambda s: s > 10),
        share_gt_threshold=None if threshold is None else share(lambda s: s > threshold),
        threshold=threshold,
    )


def tp_mean_threshold(aggregated: list[AggregatedRelevance]) -> float:
    """Mean aggregated score over TP rows; the binarization threshold."""
    tp_scores = [a.agg_score for a in aggregated if a.role is Role.TP]
    if not tp_scores:
        raise DataError("no TP-role aggregates to average")
    return sum(tp_scores) / len(tp_scores)


# --- aggregates file (JSON lines) ---

def write_aggregates_file(path: str | Path, rows: list[AggregatedRelevance],
                          seed: int | None = None,
                          inputs: tuple[str | Path, ...] = ()) -> None:
    lines = [
        dump_json_line({
            "caption_id": r.caption_id,
            "clip_id": r.clip_id,
            "role": r.role.value,
            "n_raw": r.n_raw,
            "raw_scores": list(r.raw_scores),
            "agg_score": r.agg_score,
        })
        for r in rows
    ]
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def read_aggregates_file(path: str | Path) -> list[AggregatedRelevance]:
    rows = []
    for rec in read_jsonl(path):
        try:
            rows.append(AggregatedRelevance(
                caption_id=rec["caption_id"],
                clip_id=rec["clip_id"],
                role=Role(rec["role"]),
                raw_scores=tuple(int(s) for s in rec["raw_scores"]),
                agg_score=float(rec["agg_score"]),
            ))
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}: malformed aggregate record: {exc}") from exc
    return rows


def write_histogram_file(path: str | Path, hist: Histogram,
                         inputs: tuple[str | Path, ...] = ()) -> None:
    """Plot-ready table: one row per bin plus the headline fractions."""
    lines = ["bin_start\tbin_end\tcount"]
    for i, count in enumerate(hist.bins):
        lines.append(f"{i * hist.bin_width}\t{(i + 1) * hist.bin_width}\t{count}")
    lines.append(f"# role={hist.role} total={hist.total}")
    lines.append(
        f"# share_eq_0={hist.share_eq_0!r} share_eq_100={hist.share_eq_100!r} "
        f"share_lt_20={hist.share_lt_20!r} share_gt_10={hist.share_gt_10!r}"
    )
    if hist.threshold is not None:
        lines.append(f"# share_gt_threshold={hist.share_gt_threshold!r} threshold={hist.threshold!r}")
    write_artifact(path, lines, artifact_header(inputs=inputs))
