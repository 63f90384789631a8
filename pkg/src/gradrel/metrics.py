"""Text-to-audio ranking and recall@k over a pair set's relevance definition.

A query caption ranks every clip in the pair set's clip universe by cosine
similarity of the projected vectors; ties break lexicographically by clip_id
so rankings are deterministic. Per-query recall@k is the fraction of all the
query's relevant clips that appear in the top k, averaged over queries.
Queries with zero relevant clips in the universe are excluded from the mean
and counted in the report.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradrel.errors import DataError
from gradrel.features import EmbeddingTable
from gradrel.io import artifact_header, write_artifact
from gradrel.pairs import PairSet
from gradrel.projection import ProjectionModel


@dataclass(frozen=True, slots=True)
class RankedList:
    caption_id: str
    clip_ids: tuple[str, ...]  # descending similarity, ties by clip_id


@dataclass(frozen=True, slots=True)
class MetricReport:
    pairset_name: str
    k: int
    per_query: dict[str, float]
    mean_recall: float
    n_queries: int
    skipped_queries: tuple[str, ...]  # zero relevant clips in the universe


def rank_clips(
    model: ProjectionModel,
    caption_id: str,
    clip_universe: list[str],
    audio_feats: EmbeddingTable,
    text_feats: EmbeddingTable,
) -> RankedList:
    if not clip_universe:
        raise DataError("empty clip universe")
    query = model.project_text(text_feats[caption_id][None, :])
    clips = sorted(clip_universe)
    emb = model.project_audio(audio_feats.matrix(clips))
    q_norm = np.linalg.norm(query)
    e_norms = np.linalg.norm(emb, axis=1)
    if q_norm == 0 or np.any(e_norms == 0):
        raise DataError("zero-norm projected vector while ranking")
    scores = (emb @ query.ravel()) / (e_norms * q_norm)
    order = sorted(range(len(clips)), key=lambda i: (-scores[i], clips[i]))
    return RankedList(caption_id=caption_id, clip_ids=tuple(clips[i] for i in order))


def recall_at_k(
    rankings: dict[str, RankedList],
    pairset: PairSet,
    k: int = 10,
) -> MetricReport:
    """Mean over queries of |relevant in top k| / |relevant|."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    per_query: dict[str, float] = {}
    skipped: list[str] = []
    for caption_id in sorted(rankings):
        relevant = pairset.relevant_clips(caption_id)
        if not relevant:
            skipped.append(caption_id)
            continue
        top = set(rankings[caption_id].clip_ids[:k])
        per_query[caption_id] = len(relevant & top) / len(relevant)
    if not per_query:
        raise DataError("no query has a relevant clip in the universe")
    return MetricReport(
        pairset_name=pairset.name,
        k=k,
        per_query=per_query,
        mean_recall=sum(per_query.values()) / len(per_query),
        n_queries=len(per_query),
        skipped_queries=tuple(skipped),
    )


def evaluate(
    model: ProjectionModel,
    eval_pairsets: list[PairSet],
    audio_feats: EmbeddingTable,
    text_feats: EmbeddingTable,
    k: int = 10,
) -> list[MetricReport]:
    """Score one trained model against each pair set's own universe."""
    splits = {p.split for p in eval_pairsets}
    if len(splits) > 1:
        raise DataError(f"evaluation pair sets span multiple splits: {sorted(splits)}")
    reports = []
    for pairset in eval_pairsets:
        universe = sorted(pairset.clip_universe)
        rankings = {
            caption_id: rank_clips(model, caption_id, universe, audio_feats, text_feats)
            for caption_id in sorted(pairset.caption_universe)
        }
        reports.append(recall_at_k(rankings, pairset, k=k))
    return reports


def write_metrics_file(path: str | Path, rows: list[tuple[str, MetricReport]],
                       inputs: tuple[str | Path, ...] = ()) -> None:
    """CSV rows of (train_regime, eval_regime, k, mean_recall, n_queries)."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["train_regime", "eval_regime", "k", "mean_recall", "n_queries"])
    for train_regime, report in rows:
        writer.writerow([train_regime, report.pairset_name, report.k,
                         repr(report.mean_recall), report.n_queries])
    write_artifact(path, buf.getvalue().rstrip("\n").split("\n"),
                   artifact_header(inputs=inputs))
