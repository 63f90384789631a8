"""HTTP+JSON API over the annotation store, plus audio and static-UI serving."""

from __future__ import annotations

import mimetypes
import re
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from gradrel.answers import write_answers_file
from gradrel.errors import ServiceError
from gradrel.io import artifact_header, dump_json_line
from gradrel.service.store import AnnotationStore

_RANGE_RE = re.compile(r"bytes=(\d*)-(\d*)$")


class GradeBody(BaseModel):
    choices: dict[str, str]


class AnswerBody(BaseModel):
    scores: dict[str, int]
    listen_complete: dict[str, bool]


def create_app(store: AnnotationStore, media_root: str | None = None,
               static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="gradrel annotation service")

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"error": str(exc)})

    @app.post("/api/qualification/{worker_id}/start")
    def qualification_start(worker_id: str):
        return store.qualification_start(worker_id)

    @app.post("/api/qualification/{worker_id}/grade")
    def qualification_grade(worker_id: str, body: GradeBody):
        return store.qualification_grade(worker_id, body.choices)

    @app.get("/api/assignment")
    def next_assignment(worker: str):
        payload = store.next_assignment(worker)
        if payload is None:
            return {"assignment": None, "no_work": True}
        return {"assignment": payload, "no_work": False}

    @app.post("/api/answer/{assignment_id}")
    def submit_answer(assignment_id: str, body: AnswerBody):
        record = store.submit_answer(assignment_id, body.scores, body.listen_complete)
        return {"accepted": True, "assignment_id": record.assignment_id}

    @app.get("/api/audio/{clip_id}")
    def audio(clip_id: str, request: Request):
        clip = store.catalog.clip_by_id.get(clip_id)
        if clip is None or not clip.media_path:
            raise ServiceError(f"no audio for clip {clip_id!r}", status_code=404)
        path = Path(clip.media_path)
        if media_root is not None and not path.is_absolute():
            path = Path(media_root) / path
        if not path.is_file():
            raise ServiceError(f"audio file missing for clip {clip_id!r}", status_code=404)
        data = path.read_bytes()
        media_type = mimetypes.guess_type(path.name)[0] or "application/octet-stream"
        range_header = request.headers.get("range")
        if range_header:
            match = _RANGE_RE.match(range_header.strip())
            if not match or (not match.group(1) and not match.group(2)):
                raise ServiceError(f"unsupported Range header {range_header!r}", status_code=416)
            if match.group(1):
                start = int(match.group(1))
                end = int(match.group(2)) if match.group(2) else len(data) - 1
            else:  # suffix range: last N bytes
                start = max(0, len(data) - int(match.group(2)))
                end = len(data) - 1
            if start >= len(data) or start > end:
                raise ServiceError("range not satisfiable", status_code=416)
            end = min(end, len(data) - 1)
            return Response(
                content=data[start:end + 1],
                status_code=206,
                media_type=media_type,
                headers={
                    "Content-Range": f"bytes {start}-{end}/{len(data)}",
                    "Accept-Ranges": "bytes",
                },
            )
        return Response(content=data, media_type=media_type,
                        headers={"Accept-Ranges": "bytes"})

    @app.get("/api/export")
    def export(split: str):
        records = store.export_answers(split)
        lines = [artifact_header()]
        lines.extend(dump_json_line({
            "assignment_id": r.assignment_id,
            "hit_id": r.hit_id,
            "caption_id": r.caption_id,
            "worker_id": r.worker_id,
            "split": r.split,
            "submitted_at": r.submitted_at,
            "scores": r.scores,
            "roles": r.roles,
        }) for r in records)
        return PlainTextResponse("\n".join(lines) + "\n")

    @app.get("/api/stats")
    def stats():
        s = store.stats()
        return {
            "hits": s.hits,
            "workers_seen": s.workers_seen,
            "workers_qualified": s.workers_qualified,
            "answers": s.answers,
            "open_assignments": s.open_assignments,
            "complete": s.complete,
            "by_split": s.by_split,
        }

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


def export_to_file(store: AnnotationStore, split: str, path: str | Path) -> int:
    """Write the split's answers to a file in the shared answers format."""
    records = store.export_answers(split)
    write_answers_file(path, records)
    return len(records)
