"""Precomputed feature tables keyed by clip or caption id.

Two interchangeable on-disk forms:

  binary: magic ``GRFEAT01``, then uint32-LE count, uint32-LE dim, then per
          record a uint16-LE id byte-length, the UTF-8 id, and dim float32-LE
          values;
  text:   CSV with header ``id,f0,...,f{d-1}``, one row per id.

Loading sniffs the magic bytes. Vectors must be finite; lookups are float64.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradrel.errors import DataError

MAGIC = b"GRFEAT01"


@dataclass(frozen=True)
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        for key, vec in self.vectors.items():
            if vec.shape != (self.dim,):
                raise DataError(f"feature {key!r}: expected dim {self.dim}, got {vec.shape}")
            if not np.all(np.isfinite(vec)):
                raise DataError(f"feature {key!r}: non-finite entries")

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise DataError(f"missing feature vector for {key!r}") from None

    def matrix(self, ids: list[str]) -> np.ndarray:
        """Stack vectors for the given ids into an (n, dim) float64 array."""
        missing = [i for i in ids if i not in self.vectors]
        if missing:
            raise DataError(f"missing feature vectors for {len(missing)} ids (first: {missing[0]!r})")
        return np.stack([self.vectors[i] for i in ids]).astype(np.float64)

    def check_coverage(self, ids: set[str], label: str) -> None:
        missing = sorted(ids - set(self.vectors))
        if missing:
            raise DataError(
                f"{label}: {len(missing)} ids lack feature vectors (first: {missing[0]!r})"
            )


def write_features_binary(path: str | Path, table: EmbeddingTable) -> None:
    ids = sorted(table.vectors)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", len(ids), table.dim))
        for key in ids:
            encoded = key.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(table.vectors[key].astype("<f4").tobytes())


def write_features_text(path: str | Path, table: EmbeddingTable) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id"] + [f"f{i}" for i in range(table.dim)])
        for key in sorted(table.vectors):
            writer.writerow([key] + [repr(float(v)) for v in table.vectors[key]])


def _load_binary(path: Path) -> EmbeddingTable:
    with open(path, "rb") as f:
        data = f.read()
    offset = len(MAGIC)
    try:
        count, dim = struct.unpack_from("<II", data, offset)
        offset += 8
        vectors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            key = data[offset:offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
            offset += 4 * dim
            if key in vectors:
                raise DataError(f"{path}: duplicate feature id {key!r}")
            vectors[key] = vec
    except (struct.error, ValueError) as exc:
        raise DataError(f"{path}: truncated binary feature file") from exc
    if offset != len(data):
        raise DataError(f"{path}: trailing bytes after {count} records")
    return EmbeddingTable(dim=dim, vectors=vectors)


def _load_text(path: Path) -> EmbeddingTable:
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = [row for row in csv.reader(f) if row and not row[0].startswith("#")]
    if not rows or rows[0][:1] != ["id"]:
        raise DataError(f"{path}: expected CSV header starting with 'id'")
    dim = len(rows[0]) - 1
    if dim < 1:
        raise DataError(f"{path}: no feature columns")
    vectors: dict[str, np.ndarray] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != dim + 1:
            raise DataError(f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}")
        key = row[0]
        if key in vectors:
            raise DataError(f"{path}: duplicate feature id {key!r}")
        try:
            vectors[key] = np.array([float(v) for v in row[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad float value") from exc
    return EmbeddingTable(dim=dim, vectors=vectors)


def load_features(path: str | Path) -> EmbeddingTable:
    path = Path(path)
    try:
        with open(path, "rb") as f:
            head = f.read(len(MAGIC))
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    if head == MAGIC:
        return _load_binary(path)
    return _load_text(path)
