"""Artifact file plumbing: headers, atomic writes, and the answers format.

Every artifact the toolkit writes starts with a single comment line

    # gradrel=<version> seed=<seed or -> inputs=<digest,...  or ->

carrying the tool version, the seed the stage ran with, and short sha256
digests of the input files, so a rerun with identical inputs and seed is
byte-identical and auditable. Readers skip lines starting with ``#``.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

from gradrel import __version__
from gradrel.errors import DataError

DIGEST_CHARS = 12


def sha256_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()[:DIGEST_CHARS]


def artifact_header(seed: int | None = None, inputs: Iterable[str | Path] = ()) -> str:
    digests = ",".join(sha256_digest(p) for p in inputs) or "-"
    seed_part = "-" if seed is None else str(seed)
    return f"# gradrel={__version__} seed={seed_part} inputs={digests}"


def write_artifact(path: str | Path, lines: Iterable[str], header: str) -> None:
    """Write header + lines atomically (temp file in the same dir, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(header + "\n")
            for line in lines:
                f.write(line + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_artifact_lines(path: str | Path) -> Iterator[str]:
    """Yield non-comment, non-blank lines of an artifact file."""
    with open(path, "r", encoding="utf-8") as f:
        for raw in f:
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            yield line


def dump_json_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    for i, line in enumerate(read_artifact_lines(path), start=1):
        try:
            yield json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed JSON record on data line {i}: {exc}") from exc
