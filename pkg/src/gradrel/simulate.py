"""Synthetic worker answer streams, so the full pipeline runs without humans.

A latent relevance table assigns every (caption, clip) pairing a ground-truth
score by role: TP near the top of the scale, TN near the bottom, and C15 drawn
from a mixture that is mostly low with some mid and high mass. Worker models
then read (or corrupt) those latents:

    honest / noisy  latent + Gaussian noise, clamped to [0, 100], rounded
    inverted        like honest but with the TP and TN latents swapped
    spammer         uniform random integers, ignores the audio entirely
    constant        one fixed value for every clip

Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from functools import cached_property

from gradrel.answers import AnswerRecord
from gradrel.catalog import Role
from gradrel.errors import DataError
from gradrel.hits import AssignmentPlan, Hit
from gradrel.seeding import derived_rng

KINDS = ("honest", "noisy", "spammer", "inverted", "constant")

TP_LATENT_DEFAULT = 95.0
TN_LATENT_DEFAULT = 3.0
# C15 latent mixture: (weight, low, high) per component.
C15_MIXTURE_DEFAULT = ((0.7, 0.0, 20.0), (0.2, 30.0, 70.0), (0.1, 80.0, 100.0))


@dataclass(frozen=True)
class LatentRelevance:
    """Ground-truth relevance per (caption_id, clip_id), with the clip's role."""

    values: dict[tuple[str, str], float]
    roles: dict[tuple[str, str], Role]

    @cached_property
    def _planted_by_caption(self) -> dict[str, dict[Role, float]]:
        index: dict[str, dict[Role, float]] = {}
        for (caption_id, _clip_id), role in self.roles.items():
            if role is not Role.C15:
                index.setdefault(caption_id, {})[role] = self.values[(caption_id, _clip_id)]
        return index

    def value(self, caption_id: str, clip_id: str, swap_tp_tn: bool = False) -> float:
        key = (caption_id, clip_id)
        if not swap_tp_tn or self.roles[key] is Role.C15:
            return self.values[key]
        # Swapped view: report the TN latent for the TP clip and vice versa.
        other = Role.TN if self.roles[key] is Role.TP else Role.TP
        return self._planted_by_caption[caption_id][other]


def default_latents(
    hits: list[Hit],
    seed: int,
    tp_latent: float = TP_LATENT_DEFAULT,
    tn_latent: float = TN_LATENT_DEFAULT,
    c15_mixture: tuple[tuple[float, float, float], ...] = C15_MIXTURE_DEFAULT,
) -> LatentRelevance:
    values: dict[tuple[str, str], float] = {}
    roles: dict[tuple[str, str], Role] = {}
    for hit in sorted(hits, key=lambda h: h.hit_id):
        for clip in hit.clips:
            key = (hit.caption_id, clip.clip_id)
            if key in values:
                continue
            roles[key] = clip.role
            if clip.role is Role.TP:
                values[key] = tp_latent
            elif clip.role is Role.TN:
                values[key] = tn_latent
            else:
                rng = derived_rng(seed, "latent", hit.caption_id, clip.clip_id)
                weights = [w for w, _, _ in c15_mixture]
                idx = rng.choice(len(c15_mixture), p=[w / sum(weights) for w in weights])
                _, low, high = c15_mixture[idx]
                values[key] = float(rng.uniform(low, high))
    return LatentRelevance(values=values, roles=roles)


@dataclass(frozen=True)
class WorkerModel:
    kind: str
    latents: LatentRelevance
    noise_sd: float = 0.0
    constant_value: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown worker kind {self.kind!r}")
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if not 0 <= self.constant_value <= 100:
            raise ValueError(f"constant_value out of [0, 100]: {self.constant_value}")


def _clamp_round(value: float) -> int:
    return int(round(min(100.0, max(0.0, value))))


def answer_hit(model: WorkerModel, hit: Hit, rng) -> dict[str, int]:
    scores: dict[str, int] = {}
    for clip in hit.clips:
        if model.kind == "spammer":
            scores[clip.clip_id] = int(rng.integers(0, 101))
        elif model.kind == "constant":
            scores[clip.clip_id] = model.constant_value
        else:
            latent = model.latents.value(
                hit.caption_id, clip.clip_id, swap_tp_tn=(model.kind == "inverted")
            )
            noise = rng.normal(0.0, model.noise_sd) if model.noise_sd > 0 else 0.0
            scores[clip.clip_id] = _clamp_round(latent + noise)
    return scores


def simulate(
    plan: AssignmentPlan,
    hits: list[Hit],
    models: list[tuple[str, WorkerModel]],
    seed: int,
    split: str = "development",
) -> list[AnswerRecord]:
    """Produce ``plan.redundancy`` answers per HIT from distinct workers.

    Workers rotate across HITs so the load spreads evenly; a worker answers a
    HIT at most once. Deterministic given the seed.
    """
    if len(models) < plan.redundancy:
        raise DataError(
            f"need at least {plan.redundancy} workers to meet redundancy, got {len(models)}"
        )
    records: list[AnswerRecord] = []
    base_time = datetime(1970, 1, 1, tzinfo=timezone.utc)
    counter = 0
    for hit_idx, hit in enumerate(sorted(hits, key=lambda h: h.hit_id)):
        for r in range(plan.redundancy):
            worker_id, model = models[(hit_idx + r) % len(models)]
            rng = derived_rng(seed, "answer", worker_id, hit.hit_id)
            scores = answer_hit(model, hit, rng)
            records.append(AnswerRecord(
                assignment_id=f"sim-{hit.hit_id}-{worker_id}",
                hit_id=hit.hit_id,
                caption_id=hit.caption_id,
                worker_id=worker_id,
                split=split,
                submitted_at=(base_time + timedelta(seconds=counter)).isoformat(),
                scores=scores,
                roles={c.clip_id: c.role.value for c in hit.clips},
            ))
            counter += 1
    return records
