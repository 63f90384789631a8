"""Per-worker consistency verification and answer filtering.

A worker is kept only if, over all their answers, the mean TP-TN score gap
is at least the mean plus one standard deviation of the absolute pairwise
differences among the three C15 scores of each answer:

    mean(s_tp - s_tn)  >=  mean(|s_ca - s_cb|) + sd(|s_ca - s_cb|)

X has one sample per answer; Y has the three unordered C15 pairs per answer
(3N samples). The standard deviation is the population one (divide by count),
which stays defined for a single answer. Workers that fail are discarded
entirely, answers and all.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from gradrel.answers import AnswerRecord, RoleScores, resolve_roles
from gradrel.errors import DataError
from gradrel.hits import Hit, index_hits
from gradrel.io import artifact_header, write_artifact


@dataclass(frozen=True, slots=True)
class WorkerAnswerSet:
    worker_id: str
    answers: tuple[RoleScores, ...]

    def __post_init__(self) -> None:
        if not self.answers:
            raise ValueError(f"worker {self.worker_id!r}: answer set must be nonempty")


@dataclass(frozen=True, slots=True)
class ConsistencyStats:
    worker_id: str
    n_answers: int
    e_x: float
    e_y: float
    sd_y: float

    @property
    def passed(self) -> bool:
        return self.e_x >= self.e_y + self.sd_y

    @property
    def zero_gap(self) -> bool:
        """Flat scoring (e.g. all zeros) passes the gate vacuously; flag it."""
        return self.e_x == 0.0


def worker_stats(d: WorkerAnswerSet) -> ConsistencyStats:
    """Compute the consistency statistics for one worker's answer set."""
    xs = [s.s_tp - s.s_tn for s in d.answers]
    ys: list[int] = []
    for s in d.answers:
        c1, c2, c3 = s.s_c
        ys.extend((abs(c1 - c2), abs(c1 - c3), abs(c2 - c3)))
    e_x = sum(xs) / len(xs)
    e_y = sum(ys) / len(ys)
    var_y = sum((y - e_y) ** 2 for y in ys) / len(ys)
    return ConsistencyStats(
        worker_id=d.worker_id,
        n_answers=len(d.answers),
        e_x=e_x,
        e_y=e_y,
        sd_y=math.sqrt(var_y),
    )


@dataclass(frozen=True, slots=True)
class RejectionReport:
    """Per-worker verdicts; grouped by (worker, split) when filtered per split."""

    rows: tuple[tuple[str, str, ConsistencyStats], ...]  # (worker_id, split, stats)

    def rejected_workers(self) -> set[tuple[str, str]]:
        return {(w, s) for w, s, st in self.rows if not st.passed}


def filter_answers(
    all_answers: list[AnswerRecord],
    hits: list[Hit],
    per_split: bool = True,
) -> tuple[list[AnswerRecord], RejectionReport]:
    """Drop every answer of every worker whose answer set fails verification.

    Answers are grouped per (worker, split) by default so a worker judged
    inconsistent on one split keeps their answers on another; pass
    ``per_split=False`` to verify each worker over all splits at once.
    Retained answers preserve input order. Raises DataError for answers whose
    hit_id is not in ``hits``.
    """
    hit_index = index_hits(hits)
    groups: dict[tuple[str, str], list[RoleScores]] = {}
    keys: list[tuple[str, str]] = []
    for record in all_answers:
        hit = hit_index.get(record.hit_id)
        if hit is None:
            raise DataError(f"answer {record.assignment_id!r}: unknown hit_id {record.hit_id!r}")
        key = (record.worker_id, record.split if per_split else "*")
        groups.setdefault(key, []).append(resolve_roles(record, hit))
        keys.append(key)

    verdicts: dict[tuple[str, str], ConsistencyStats] = {}
    for key in sorted(groups):
        worker_id, _split = key
        verdicts[key] = worker_stats(WorkerAnswerSet(worker_id, tuple(groups[key])))

    retained = [
        record for record, key in zip(all_answers, keys) if verdicts[key].passed
    ]
    report = RejectionReport(rows=tuple(
        (worker_id, split, verdicts[(worker_id, split)])
        for worker_id, split in sorted(verdicts)
    ))
    return retained, report


def write_rejection_report(path: str | Path, report: RejectionReport,
                           inputs: tuple[str | Path, ...] = ()) -> None:
    """Structured-text table: worker_id, split, N, e_x, e_y, sd_y, verdict, warning."""
    lines = ["worker_id\tsplit\tn_answers\te_x\te_y\tsd_y\tverdict\twarning"]
    for worker_id, split, st in report.rows:
        verdict = "pass" if st.passed else "fail"
        warning = "zero-gap" if st.zero_gap else "-"
        lines.append(
            f"{worker_id}\t{split}\t{st.n_answers}\t{st.e_x!r}\t{st.e_y!r}\t{st.sd_y!r}\t{verdict}\t{warning}"
        )
    write_artifact(path, lines, artifact_header(inputs=inputs))
