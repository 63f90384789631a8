"""Service configuration: JSON file, overridden by GRADREL_* env vars,
overridden by CLI flags."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from gradrel.errors import DataError

ENV_PREFIX = "GRADREL_"


@dataclass(frozen=True)
class ServiceConfig:
    clip_table: str = "clips.csv"
    caption_table: str = "captions.csv"
    hits_file: str = "hits.jsonl"
    qualification_pool: str | None = None
    answers_log: str = "answers.log"
    media_root: str | None = None
    static_dir: str | None = None

    host: str = "127.0.0.1"
    port: int = 8765
    redundancy: int = 5
    overshoot_allowance: int = 2
    assignment_timeout_s: float = 1800.0
    qualification_items: int = 3
    qualification_threshold: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.redundancy < 1:
            raise DataError(f"redundancy must be >= 1, got {self.redundancy}")
        if self.overshoot_allowance < 0:
            raise DataError("overshoot_allowance must be >= 0")
        if self.assignment_timeout_s <= 0:
            raise DataError("assignment_timeout_s must be > 0")
        if not 0 < self.qualification_threshold <= 1:
            raise DataError("qualification_threshold must be in (0, 1]")


_INT_FIELDS = {"port", "redundancy", "overshoot_allowance", "qualification_items", "seed"}
_FLOAT_FIELDS = {"assignment_timeout_s", "qualification_threshold"}


def load_config(path: str | Path | None = None,
                env: dict[str, str] | None = None,
                overrides: dict[str, object] | None = None) -> ServiceConfig:
    """Defaults <- config file <- GRADREL_* env vars <- explicit overrides."""
    values: dict[str, object] = {}
    known = {f.name for f in fields(ServiceConfig)}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        unknown = set(raw) - known
        if unknown:
            raise DataError(f"unknown config keys: {sorted(unknown)}")
        values.update(raw)

    env = os.environ if env is None else env
    for name in known:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = env[env_key]

    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})

    for name in list(values):
        if values[name] is None:
            continue
        try:
            if name in _INT_FIELDS:
                values[name] = int(values[name])
            elif name in _FLOAT_FIELDS:
                values[name] = float(values[name])
        except (TypeError, ValueError) as exc:
            raise DataError(f"config field {name}: bad value {values[name]!r}") from exc

    return ServiceConfig(**values)  # type: ignore[arg-type]
