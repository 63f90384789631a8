from __future__ import annotations

import json
import threading
import wave
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from gradrel.catalog import AudioClip, CaptionItem, Catalog
from gradrel.errors import DataError, ServiceError
from gradrel.hits import AssignmentPlan, build_hits, select_candidates
from gradrel.service.app import create_app, export_to_file
from gradrel.service.config import load_config
from gradrel.service.store import AnnotationStore, QualificationItem, load_qualification_pool

from conftest import build_catalog


class FakeClock:
    def __init__(self, start=1000.0):
        self.now = start

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


def write_wav(path: Path, n_frames=400):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(bytes(2 * n_frames))


@pytest.fixture
def service_parts(tmp_path):
    n_clips = 20
    clips = []
    media_dir = tmp_path / "media"
    media_dir.mkdir()
    for i in range(n_clips):
        cid = f"c{i:03d}"
        wav = media_dir / f"{cid}.wav"
        write_wav(wav)
        clips.append(AudioClip(cid, "development", 2.0, str(wav)))
    captions = [CaptionItem("q1", "development", "rain on a tin roof", "c000"),
                CaptionItem("q2", "development", "a crowd cheering", "c001")]
    similarity = {}
    for q in ("q1", "q2"):
        for i in range(n_clips):
            similarity[(q, f"c{i:03d}")] = (i * 31 % 97) / 100.0
    catalog = Catalog(clips=tuple(clips), captions=tuple(captions), similarity=similarity)
    hits = []
    for q in ("q1", "q2"):
        hits.extend(build_hits(select_candidates(catalog, q, seed=5), seed=5))
    pool = [
        QualificationItem(f"item{i}", f"caption {i}", (f"c{i:03d}", f"c{i + 1:03d}", f"c{i + 2:03d}"),
                          f"c{i:03d}")
        for i in range(6)
    ]
    return catalog, hits, pool


def make_store(tmp_path, service_parts, redundancy=2, clock=None, **kwargs):
    catalog, hits, pool = service_parts
    return AnnotationStore(
        catalog=catalog,
        hits=hits,
        plan=AssignmentPlan(redundancy=redundancy),
        qualification_pool=pool,
        answers_log=tmp_path / "answers.log",
        clock=clock or FakeClock(),
        **kwargs,
    )


def qualify(store, worker_id):
    issued = store.qualification_start(worker_id)
    choices = {item["item_id"]: store.pool[item["item_id"]].correct for item in issued["items"]}
    result = store.qualification_grade(worker_id, choices)
    assert result["qualified"]


def complete(store, worker_id, scores_value=0):
    payload = store.next_assignment(worker_id)
    if payload is None:
        return None
    scores = {c["clip_id"]: scores_value for c in payload["clips"]}
    listened = {c["clip_id"]: True for c in payload["clips"]}
    return store.submit_answer(payload["assignment_id"], scores, listened)


# --- qualification ---

def test_qualification_flow(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    issued = store.qualification_start("w1")
    assert len(issued["items"]) == 3
    assert all("correct" not in item for item in issued["items"])
    # idempotent before grading
    assert store.qualification_start("w1") == issued

    items = issued["items"]
    choices = {i["item_id"]: store.pool[i["item_id"]].correct for i in items}
    result = store.qualification_grade("w1", choices)
    assert result == {"qualified": True, "score": 1.0}
    assert store.qualification_start("w1")["already_qualified"]


def test_qualification_items_reproducible_from_worker_id(tmp_path, service_parts):
    store_a = make_store(tmp_path / "a", service_parts)
    store_b = make_store(tmp_path / "b", service_parts)
    for worker in (f"worker{i}" for i in range(30)):
        assert (store_a.qualification_start(worker)["items"]
                == store_b.qualification_start(worker)["items"])


def test_qualification_threshold_semantics(tmp_path, service_parts):
    strict = make_store(tmp_path / "s", service_parts)
    issued = strict.qualification_start("w")["items"]
    choices = {i["item_id"]: strict.pool[i["item_id"]].correct for i in issued}
    wrong_item = issued[0]["item_id"]
    choices[wrong_item] = next(
        c for c in strict.pool[wrong_item].candidates if c != strict.pool[wrong_item].correct
    )
    result = strict.qualification_grade("w", choices)
    assert result["score"] == pytest.approx(2 / 3)
    assert not result["qualified"]

    lenient = make_store(tmp_path / "l", service_parts, qualification_threshold=0.66)
    issued = lenient.qualification_start("w")["items"]
    choices = {i["item_id"]: lenient.pool[i["item_id"]].correct for i in issued}
    choices[issued[0]["item_id"]] = next(
        c for c in lenient.pool[issued[0]["item_id"]].candidates
        if c != lenient.pool[issued[0]["item_id"]].correct
    )
    assert lenient.qualification_grade("w", choices)["qualified"]


def test_grade_rejects_unissued_items(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    store.qualification_start("w")
    with pytest.raises(ServiceError, match="un-issued"):
        store.qualification_grade("w", {"not-an-item": "c000"})
    with pytest.raises(ServiceError, match="no issued"):
        store.qualification_grade("ghost", {})


# --- assignments & answers ---

def test_unqualified_worker_gets_no_assignment(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    with pytest.raises(ServiceError, match="not qualified"):
        store.next_assignment("w")


def test_worker_never_sees_answered_hit_again(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts, redundancy=5)
    qualify(store, "w")
    seen = set()
    while (record := complete(store, "w")) is not None:
        assert record.hit_id not in seen
        seen.add(record.hit_id)
    assert len(seen) == 10  # every hit exactly once, then no-work


def test_refresh_resumes_same_open_assignment(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    qualify(store, "w")
    first = store.next_assignment("w")
    second = store.next_assignment("w")
    assert first["assignment_id"] == second["assignment_id"]


def test_no_work_marker_when_all_hits_at_redundancy(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts, redundancy=1)
    qualify(store, "done")
    while complete(store, "done") is not None:
        pass
    qualify(store, "late")
    assert store.next_assignment("late") is None


def test_submit_validations(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    qualify(store, "w")
    payload = store.next_assignment("w")
    clip_ids = [c["clip_id"] for c in payload["clips"]]
    good_scores = {cid: 50 for cid in clip_ids}
    listened = {cid: True for cid in clip_ids}

    with pytest.raises(ServiceError, match="out of"):
        store.submit_answer(payload["assignment_id"], {**good_scores, clip_ids[0]: 101}, listened)
    with pytest.raises(ServiceError, match="exactly"):
        store.submit_answer(payload["assignment_id"],
                            {cid: 50 for cid in clip_ids[:4]}, listened)
    with pytest.raises(ServiceError, match="listened"):
        store.submit_answer(payload["assignment_id"], good_scores,
                            {**listened, clip_ids[2]: False})
    record = store.submit_answer(payload["assignment_id"], good_scores, listened)
    assert record.scores == good_scores
    with pytest.raises(ServiceError, match="not open"):
        store.submit_answer(payload["assignment_id"], good_scores, listened)


def test_assignments_expire_and_are_reissued(tmp_path, service_parts):
    clock = FakeClock()
    store = make_store(tmp_path, service_parts, redundancy=1, clock=clock,
                       assignment_timeout_s=60.0)
    qualify(store, "slow")
    qualify(store, "fast")
    first = store.next_assignment("slow")
    # the lone needed answer is reserved; nothing for the other worker on that hit
    clock.advance(120.0)
    payload = store.next_assignment("fast")
    assert payload["hit_id"] == first["hit_id"]  # reissued after expiry
    scores = {c["clip_id"]: 0 for c in payload["clips"]}
    listened = {c["clip_id"]: True for c in payload["clips"]}
    store.submit_answer(payload["assignment_id"], scores, listened)
    with pytest.raises(ServiceError, match="expired"):
        store.submit_answer(first["assignment_id"], scores, listened)


def test_concurrent_polling_issues_exactly_one(tmp_path, service_parts):
    # 1 HIT short of redundancy, many workers polling concurrently: the
    # number of issued assignments never exceeds what is needed.
    store = make_store(tmp_path, service_parts, redundancy=1)
    workers = [f"w{i}" for i in range(8)]
    for w in workers:
        qualify(store, w)
    results = {}
    barrier = threading.Barrier(len(workers))

    def poll(worker_id):
        barrier.wait()
        results[worker_id] = store.next_assignment(worker_id)

    threads = [threading.Thread(target=poll, args=(w,)) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    by_hit: dict[str, int] = {}
    for payload in results.values():
        if payload is not None:
            by_hit[payload["hit_id"]] = by_hit.get(payload["hit_id"], 0) + 1
    assert all(count == 1 for count in by_hit.values())


def test_export_sorted_deterministic_and_appendonly(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts, redundancy=2)
    for w in ("zeta", "alpha"):
        qualify(store, w)
        complete(store, w, scores_value=10)
    out1 = tmp_path / "export1.jsonl"
    out2 = tmp_path / "export2.jsonl"
    assert export_to_file(store, "development", out1) == 2
    assert export_to_file(store, "development", out2) == 2
    assert out1.read_bytes() == out2.read_bytes()
    workers = [json.loads(l)["worker_id"] for l in out1.read_text().splitlines()[1:]]
    assert workers == sorted(workers)

    with pytest.raises(ServiceError, match="unknown split"):
        store.export_answers("tuesday")
    assert store.export_answers("evaluation") == []


def test_log_replay_restores_answers(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts)
    qualify(store, "w")
    complete(store, "w", scores_value=42)

    reloaded = make_store(tmp_path, service_parts)
    assert len(reloaded.answers) == 1
    assert reloaded.answers[0].scores == store.answers[0].scores
    assert reloaded.workers["w"].qualified
    # the answered hit is not offered to the same worker again
    taken = reloaded.next_assignment("w")
    assert taken["hit_id"] != store.answers[0].hit_id


# --- HTTP layer ---

@pytest.fixture
def client(tmp_path, service_parts):
    store = make_store(tmp_path, service_parts, redundancy=1)
    app = create_app(store)
    return TestClient(app), store


def test_http_full_annotation_flow(client):
    http, store = client
    issued = http.post("/api/qualification/w9/start").json()
    choices = {i["item_id"]: store.pool[i["item_id"]].correct for i in issued["items"]}
    graded = http.post("/api/qualification/w9/grade", json={"choices": choices}).json()
    assert graded["qualified"] is True

    got = http.get("/api/assignment", params={"worker": "w9"}).json()
    assert got["no_work"] is False
    assignment = got["assignment"]
    assert len(assignment["clips"]) == 5
    assert "role" not in json.dumps(assignment)  # roles withheld from payload

    scores = {c["clip_id"]: 0 for c in assignment["clips"]}
    listened = {c["clip_id"]: True for c in assignment["clips"]}
    posted = http.post(f"/api/answer/{assignment['assignment_id']}",
                       json={"scores": scores, "listen_complete": listened})
    assert posted.status_code == 200
    assert posted.json()["accepted"] is True

    stats = http.get("/api/stats").json()
    assert stats["answers"] == 1
    assert stats["workers_qualified"] == 1

    export = http.get("/api/export", params={"split": "development"})
    assert export.status_code == 200
    body_lines = export.text.strip().splitlines()
    assert body_lines[0].startswith("# gradrel=")
    assert len(body_lines) == 2


def test_http_error_mapping(client):
    http, _store = client
    assert http.get("/api/assignment", params={"worker": "nobody"}).status_code == 403
    assert http.get("/api/export", params={"split": "bogus"}).status_code == 404
    assert http.post("/api/answer/ghost",
                     json={"scores": {}, "listen_complete": {}}).status_code == 404


def test_http_audio_serving_with_ranges(client):
    http, store = client
    clip_id = store.catalog.clips[0].clip_id
    full = http.get(f"/api/audio/{clip_id}")
    assert full.status_code == 200
    assert full.headers["accept-ranges"] == "bytes"
    size = len(full.content)

    partial = http.get(f"/api/audio/{clip_id}", headers={"Range": "bytes=0-99"})
    assert partial.status_code == 206
    assert len(partial.content) == 100
    assert partial.headers["content-range"] == f"bytes 0-99/{size}"

    tail = http.get(f"/api/audio/{clip_id}", headers={"Range": "bytes=-50"})
    assert tail.status_code == 206
    assert tail.content == full.content[-50:]

    out_of_range = http.get(f"/api/audio/{clip_id}", headers={"Range": f"bytes={size + 10}-"})
    assert out_of_range.status_code == 416
    assert http.get("/api/audio/nope").status_code == 404


# --- config & pool files ---

def test_load_config_layering(tmp_path):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"port": 9000, "redundancy": 3}), encoding="utf-8")
    cfg = load_config(cfg_path, env={"GRADREL_PORT": "9100"}, overrides={"seed": 7})
    assert cfg.port == 9100       # env beats file
    assert cfg.redundancy == 3    # file beats default
    assert cfg.seed == 7          # override beats all
    with pytest.raises(DataError, match="unknown config keys"):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"prot": 1}), encoding="utf-8")
        load_config(bad)


def test_qualification_pool_file(tmp_path):
    path = tmp_path / "pool.jsonl"
    path.write_text(
        json.dumps({"item_id": "i1", "caption": "rain", "candidates": ["a", "b", "c"],
                    "correct": "b"}) + "\n",
        encoding="utf-8",
    )
    items = load_qualification_pool(path)
    assert items[0].correct == "b"
    path.write_text(
        json.dumps({"item_id": "i1", "caption": "rain", "candidates": ["a", "b", "c"],
                    "correct": "z"}) + "\n",
        encoding="utf-8",
    )
    with pytest.raises(DataError, match="correct clip"):
        load_qualification_pool(path)
