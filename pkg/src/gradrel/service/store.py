"""In-memory service state with an append-only event log.

All mutations run under one lock, so assignment issuance and answer
submission are linearizable per HIT: a HIT is issued only while its submitted
plus open assignment count stays below the target redundancy, and near-
simultaneous completions can exceed redundancy by at most the configured
overshoot allowance (the service over-delivers, never under-delivers).

Persistence is a single-writer JSONL event log (qualification grades and
answers). Replaying the log on startup restores submitted work; open
assignments are deliberately not persisted, they simply expire.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from gradrel.answers import AnswerRecord, validate_scores
from gradrel.catalog import SPLITS, Catalog
from gradrel.errors import DataError, ServiceError
from gradrel.hits import AssignmentPlan, Hit, index_hits
from gradrel.io import read_jsonl
from gradrel.seeding import derived_rng


@dataclass(frozen=True, slots=True)
class QualificationItem:
    item_id: str
    caption: str
    candidates: tuple[str, str, str]
    correct: str

    def __post_init__(self) -> None:
        if len(set(self.candidates)) != 3:
            raise DataError(f"qualification item {self.item_id!r}: candidates must be 3 distinct clips")
        if self.correct not in self.candidates:
            raise DataError(f"qualification item {self.item_id!r}: correct clip not among candidates")


def load_qualification_pool(path: str | Path) -> list[QualificationItem]:
    items = []
    seen = set()
    for rec in read_jsonl(path):
        try:
            item = QualificationItem(
                item_id=rec["item_id"],
                caption=rec["caption"],
                candidates=tuple(rec["candidates"]),
                correct=rec["correct"],
            )
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed qualification item: {exc}") from exc
        if item.item_id in seen:
            raise DataError(f"{path}: duplicate qualification item {item.item_id!r}")
        seen.add(item.item_id)
        items.append(item)
    return items


@dataclass
class WorkerProfile:
    worker_id: str
    qualified: bool = False
    qualification_score: float = 0.0
    answers_submitted: int = 0
    issued_items: tuple[str, ...] = ()


@dataclass
class Assignment:
    assignment_id: str
    hit_id: str
    worker_id: str
    issued_at: float
    state: str = "open"  # open | submitted | expired


@dataclass(frozen=True, slots=True)
class ServiceStats:
    hits: int
    workers_seen: int
    workers_qualified: int
    answers: int
    open_assignments: int
    complete: bool
    by_split: dict[str, dict[str, int]] = field(default_factory=dict)


class AnnotationStore:
    """The service's single source of truth; thread-safe."""

    def __init__(
        self,
        catalog: Catalog,
        hits: list[Hit],
        plan: AssignmentPlan,
        qualification_pool: list[QualificationItem],
        answers_log: str | Path,
        qualification_items: int = 3,
        qualification_threshold: float = 1.0,
        assignment_timeout_s: float = 1800.0,
        overshoot_allowance: int = 2,
        seed: int = 0,
        clock=time.time,
    ):
        self._lock = threading.RLock()
        self.catalog = catalog
        self.hits = index_hits(hits)
        self.plan = plan
        self.pool = {item.item_id: item for item in qualification_pool}
        self.answers_log = Path(answers_log)
        self.qualification_items = qualification_items
        self.qualification_threshold = qualification_threshold
        self.assignment_timeout_s = assignment_timeout_s
        self.overshoot_allowance = overshoot_allowance
        self.seed = seed
        self.clock = clock

        self.workers: dict[str, WorkerProfile] = {}
        self.assignments: dict[str, Assignment] = {}
        self.answers: list[AnswerRecord] = []
        self._answered: set[tuple[str, str]] = set()  # (hit_id, worker_id)
        self._counter = 0
        self._split_of_hit = {
            h.hit_id: catalog.caption_by_id[h.caption_id].split for h in hits
        }
        if self.answers_log.exists():
            self._replay_log()

    # --- persistence ---

    def _append_event(self, event: dict) -> None:
        self.answers_log.parent.mkdir(parents=True, exist_ok=True)
        with open(self.answers_log, "a", encoding="utf-8") as f:
            f.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    def _replay_log(self) -> None:
        with open(self.answers_log, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                if event["type"] == "qualification":
                    profile = self._profile(event["worker_id"])
                    profile.qualified = event["qualified"]
                    profile.qualification_score = event["score"]
                elif event["type"] == "answer":
                    record = AnswerRecord(
                        assignment_id=event["assignment_id"],
                        hit_id=event["hit_id"],
                        caption_id=event["caption_id"],
                        worker_id=event["worker_id"],
                        split=event["split"],
                        submitted_at=event["submitted_at"],
                        scores={k: int(v) for k, v in event["scores"].items()},
                        roles=event["roles"],
                    )
                    self.answers.append(record)
                    self._answered.add((record.hit_id, record.worker_id))
                    self._profile(record.worker_id).answers_submitted += 1
                    self._counter += 1

    # --- qualification ---

    def _profile(self, worker_id: str) -> WorkerProfile:
        if worker_id not in self.workers:
            self.workers[worker_id] = WorkerProfile(worker_id=worker_id)
        return self.workers[worker_id]

    def qualification_start(self, worker_id: str) -> dict:
        """Issue the worker's test items (correct answers withheld).

        Deterministic per worker: the same worker always receives the same
        items, so calling twice before grading is idempotent.
        """
        with self._lock:
            profile = self._profile(worker_id)
            if profile.qualified:
                return {"already_qualified": True, "items": []}
            if not self.pool:
                raise ServiceError("qualification pool is empty", status_code=503)
            pool_ids = sorted(self.pool)
            count = min(self.qualification_items, len(pool_ids))
            rng = derived_rng(self.seed, "qualification", worker_id)
            chosen = [pool_ids[i] for i in rng.choice(len(pool_ids), size=count, replace=False)]
            profile.issued_items = tuple(chosen)
            return {
                "already_qualified": False,
                "items": [
                    {
                        "item_id": item_id,
                        "caption": self.pool[item_id].caption,
                        "candidates": list(self.pool[item_id].candidates),
                    }
                    for item_id in chosen
                ],
            }

    def qualification_grade(self, worker_id: str, choices: dict[str, str]) -> dict:
        with self._lock:
            profile = self.workers.get(worker_id)
            if profile is None or not profile.issued_items:
                if profile is not None and profile.qualified:
                    return {"qualified": True, "score": profile.qualification_score}
                raise ServiceError(f"worker {worker_id!r} has no issued qualification items",
                                   status_code=404)
            issued = set(profile.issued_items)
            stray = set(choices) - issued
            if stray:
                raise ServiceError(f"choices reference un-issued items: {sorted(stray)}")
            correct = sum(
                1 for item_id in profile.issued_items
                if choices.get(item_id) == self.pool[item_id].correct
            )
            score = correct / len(profile.issued_items)
            profile.qualification_score = score
            profile.qualified = score >= self.qualification_threshold
            profile.issued_items = ()
            self._append_event({
                "type": "qualification",
                "worker_id": worker_id,
                "score": score,
                "qualified": profile.qualified,
            })
            return {"qualified": profile.qualified, "score": score}

    # --- assignments ---

    def _expire_stale(self, now: float) -> None:
        for assignment in self.assignments.values():
            if assignment.state == "open" and now - assignment.issued_at > self.assignment_timeout_s:
                assignment.state = "expired"

    def _open_by_hit(self) -> dict[str, list[Assignment]]:
        out: dict[str, list[Assignment]] = {}
        for a in self.assignments.values():
            if a.state == "open":
                out.setdefault(a.hit_id, []).append(a)
        return out

    def _submitted_count(self, hit_id: str) -> int:
        return sum(1 for h, _ in self._answered if h == hit_id)

    def next_assignment(self, worker_id: str) -> dict | None:
        """Atomically reserve an under-redundant HIT the worker has not seen.

        Returns the assignment payload (roles withheld) or None when no work
        remains for this worker.
        """
        with self._lock:
            profile = self.workers.get(worker_id)
            if profile is None or not profile.qualified:
                raise ServiceError(f"worker {worker_id!r} is not qualified", status_code=403)
            now = self.clock()
            self._expire_stale(now)
            # refreshing mid-assignment resumes the same open assignment
            for assignment in self.assignments.values():
                if assignment.state == "open" and assignment.worker_id == worker_id:
                    return self._payload(assignment)
            open_by_hit = self._open_by_hit()
            submitted_by_hit: dict[str, int] = {}
            for hit_id, _worker in self._answered:
                submitted_by_hit[hit_id] = submitted_by_hit.get(hit_id, 0) + 1

            for hit_id in sorted(self.hits):
                opens = open_by_hit.get(hit_id, [])
                if submitted_by_hit.get(hit_id, 0) + len(opens) >= self.plan.redundancy:
                    continue
                if (hit_id, worker_id) in self._answered:
                    continue
                self._counter += 1
                assignment = Assignment(
                    assignment_id=f"a{self._counter:06d}",
                    hit_id=hit_id,
                    worker_id=worker_id,
                    issued_at=now,
                )
                self.assignments[assignment.assignment_id] = assignment
                return self._payload(assignment)
            return None

    def _payload(self, assignment: Assignment) -> dict:
        hit = self.hits[assignment.hit_id]
        caption = self.catalog.caption_by_id[hit.caption_id]
        return {
            "assignment_id": assignment.assignment_id,
            "hit_id": hit.hit_id,
            "caption": caption.text,
            "clips": [
                {"clip_id": c.clip_id, "audio_url": f"/api/audio/{c.clip_id}"}
                for c in hit.clips
            ],
        }

    def submit_answer(self, assignment_id: str, scores: dict[str, int],
                      listen_complete: dict[str, bool]) -> AnswerRecord:
        with self._lock:
            assignment = self.assignments.get(assignment_id)
            if assignment is None:
                raise ServiceError(f"unknown assignment {assignment_id!r}", status_code=404)
            now = self.clock()
            self._expire_stale(now)
            if assignment.state != "open":
                raise ServiceError(f"assignment {assignment_id!r} is {assignment.state}, not open",
                                   status_code=409)
            hit = self.hits[assignment.hit_id]
            clip_ids = {c.clip_id for c in hit.clips}
            try:
                validate_scores(scores, clip_ids)
            except DataError as exc:
                raise ServiceError(str(exc), status_code=422) from exc
            unheard = sorted(cid for cid in clip_ids if not listen_complete.get(cid, False))
            if unheard:
                raise ServiceError(
                    f"every clip must be listened to completely before submitting "
                    f"(incomplete: {unheard})", status_code=422)
            if self._submitted_count(hit.hit_id) >= self.plan.redundancy + self.overshoot_allowance:
                assignment.state = "expired"
                raise ServiceError(
                    f"HIT {hit.hit_id!r} already has its full answer allowance", status_code=409)

            assignment.state = "submitted"
            record = AnswerRecord(
                assignment_id=assignment_id,
                hit_id=hit.hit_id,
                caption_id=hit.caption_id,
                worker_id=assignment.worker_id,
                split=self._split_of_hit[hit.hit_id],
                submitted_at=datetime.fromtimestamp(now, tz=timezone.utc).isoformat(),
                scores=dict(scores),
                roles={c.clip_id: c.role.value for c in hit.clips},
            )
            self.answers.append(record)
            self._answered.add((hit.hit_id, assignment.worker_id))
            self._profile(assignment.worker_id).answers_submitted += 1
            self._append_event({
                "type": "answer",
                "assignment_id": record.assignment_id,
                "hit_id": record.hit_id,
                "caption_id": record.caption_id,
                "worker_id": record.worker_id,
                "split": record.split,
                "submitted_at": record.submitted_at,
                "scores": record.scores,
                "roles": record.roles,
            })
            return record

    # --- export & stats ---

    def export_answers(self, split: str) -> list[AnswerRecord]:
        """Consistent snapshot of the split's answers, stably sorted by
        (hit_id, worker_id); re-export never loses or reorders records."""
        if split not in SPLITS:
            raise ServiceError(f"unknown split {split!r}", status_code=404)
        with self._lock:
            records = [r for r in self.answers if r.split == split]
        return sorted(records, key=lambda r: (r.hit_id, r.worker_id, r.submitted_at))

    def stats(self) -> ServiceStats:
        with self._lock:
            submitted_by_hit: dict[str, int] = {}
            for hit_id, _worker in self._answered:
                submitted_by_hit[hit_id] = submitted_by_hit.get(hit_id, 0) + 1
            complete = all(
                submitted_by_hit.get(hit_id, 0) >= self.plan.redundancy
                for hit_id in self.hits
            )
            by_split: dict[str, dict[str, int]] = {}
            for split in SPLITS:
                split_hits = [h for h, s in self._split_of_hit.items() if s == split]
                if not split_hits:
                    continue
                by_split[split] = {
                    "hits": len(split_hits),
                    "answers": sum(1 for r in self.answers if r.split == split),
                    "workers": len({r.worker_id for r in self.answers if r.split == split}),
                }
            return ServiceStats(
                hits=len(self.hits),
                workers_seen=len(self.workers),
                workers_qualified=sum(1 for w in self.workers.values() if w.qualified),
                answers=len(self.answers),
                open_assignments=sum(1 for a in self.assignments.values() if a.state == "open"),
                complete=complete,
                by_split=by_split,
            )
