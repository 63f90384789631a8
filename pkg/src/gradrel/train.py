"""Training loop for the projection heads: Adam, plateau LR schedule,
early stopping, and a duplicate-aware in-batch sampler.

Each epoch shuffles the positive pairs with an epoch-derived seed and packs
them into batches that avoid repeating a clip or caption id inside one batch
where feasible (a repeated id would put a true positive on an off-diagonal
slot, turning it into a false in-batch negative). Validation loss over fixed
seeded batches drives the schedule: no improvement for ``plateau_patience``
epochs cuts the learning rate by ``plateau_factor`` (checked after the early
stop, so a stop never triggers a final cut), and no improvement for
``early_stop_patience`` epochs ends training. The best-validation model is
returned.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gradrel.errors import DataError
from gradrel.features import EmbeddingTable
from gradrel.io import artifact_header, write_artifact
from gradrel.pairs import PairSet
from gradrel.projection import ProjectionModel, batch_loss, infonce_gradients
from gradrel.seeding import derived_rng


@dataclass(frozen=True, slots=True)
class TrainConfig:
    batch_size: int = 32
    lr0: float = 0.001
    plateau_factor: float = 0.1
    plateau_patience: int = 5
    early_stop_patience: int = 10
    tau: float = 0.07
    seed: int = 0
    max_epochs: int = 100
    embed_dim: int = 300

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.lr0 <= 0 or self.tau <= 0 or self.max_epochs < 1:
            raise ValueError("batch_size, lr0, tau and max_epochs must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError(f"plateau_factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")

    def to_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "lr0": self.lr0,
            "plateau_factor": self.plateau_factor,
            "plateau_patience": self.plateau_patience,
            "early_stop_patience": self.early_stop_patience,
            "tau": self.tau,
            "seed": self.seed,
            "max_epochs": self.max_epochs,
            "embed_dim": self.embed_dim,
        }


class Adam:
    """First/second-moment adaptive updates with bias correction."""

    def __init__(self, params: dict[str, np.ndarray], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad * grad
            params[key] -= self.lr * (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)


class PlateauSchedule:
    """Multiply the LR by ``factor`` after ``patience`` consecutive epochs
    without strict improvement of the monitored loss."""

    def __init__(self, lr0: float, factor: float, patience: int):
        self.lr = lr0
        self.factor = factor
        self.patience = patience
        self.best = float("inf")
        self.stale = 0

    def update(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


class EarlyStopping:
    """Signal a stop after ``patience`` consecutive non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = float("inf")
        self.stale = 0

    def update(self, loss: float) -> bool:
        if loss < self.best:
            self.best = loss
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


@dataclass(frozen=True, slots=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class History:
    initial_val_loss: float
    epochs: list[EpochRecord] = field(default_factory=list)

    def val_losses(self) -> list[float]:
        return [e.val_loss for e in self.epochs]

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "lr"])
        writer.writerow([0, "", repr(self.initial_val_loss), ""])
        for e in self.epochs:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_loss), repr(e.lr)])
        return buf.getvalue()


def write_history_file(path: str | Path, history: History, seed: int | None = None,
                       inputs: tuple[str | Path, ...] = ()) -> None:
    lines = history.to_csv().rstrip("\n").split("\n")
    write_artifact(path, lines, artifact_header(seed=seed, inputs=inputs))


def batch_pairs(
    pairs: list[tuple[str, str]],
    batch_size: int,
    rng: np.random.Generator,
) -> list[list[tuple[str, str]]]:
    """Shuffle pairs and pack them into batches without repeating a clip or
    caption id inside a batch, where feasible.

    Greedy: scan the shuffled queue, take the first pairs that do not collide
    with the batch so far; when a full scan adds nothing (every remaining pair
    collides), admit one colliding pair so packing always terminates.
    Singleton leftovers are dropped (a one-pair batch has no negatives).
    """
    queue = [pairs[i] for i in rng.permutation(len(pairs))]
    batches: list[list[tuple[str, str]]] = []
    while queue:
        batch: list[tuple[str, str]] = []
        clips: set[str] = set()
        caps: set[str] = set()
        rest: list[tuple[str, str]] = []
        for pair in queue:
            if len(batch) < batch_size and pair[0] not in clips and pair[1] not in caps:
                batch.append(pair)
                clips.add(pair[0])
                caps.add(pair[1])
            else:
                rest.append(pair)
        if len(batch) == 1 and rest:
            # No collision-free companion exists for this pair; admit
            # duplicates rather than starve training.
            take = min(batch_size - 1, len(rest))
            batch.extend(rest[:take])
            rest = rest[take:]
        queue = rest
        batches.append(batch)
    return [b for b in batches if len(b) >= 2]


def _gather(pairs: list[tuple[str, str]], audio_feats: EmbeddingTable,
            text_feats: EmbeddingTable) -> tuple[np.ndarray, np.ndarray]:
    return (
        audio_feats.matrix([c for c, _ in pairs]),
        text_feats.matrix([q for _, q in pairs]),
    )


def _validation_batches(val_pairs: list[tuple[str, str]], batch_size: int,
                        seed: int) -> list[list[tuple[str, str]]]:
    rng = derived_rng(seed, "val-batches")
    return batch_pairs(val_pairs, batch_size, rng)


def validation_loss(batches: list[list[tuple[str, str]]],
                    audio_feats: EmbeddingTable, text_feats: EmbeddingTable,
                    model: ProjectionModel) -> float:
    losses = []
    for batch in batches:
        x, y = _gather(batch, audio_feats, text_feats)
        losses.append(batch_loss(x, y, model))
    return float(np.mean(losses))


def train(
    pairs: PairSet,
    audio_feats: EmbeddingTable,
    text_feats: EmbeddingTable,
    cfg: TrainConfig,
    val_pairs: PairSet,
) -> tuple[ProjectionModel, History]:
    """Fit the projection heads on a positive-pair set.

    Returns the model snapshot with the best validation loss and the full
    per-epoch history. Deterministic for a fixed config and inputs.
    """
    train_list = sorted(pairs.positives)
    val_list = sorted(val_pairs.positives)
    if not train_list:
        raise DataError(f"pair set {pairs.name!r} has no positives")
    if not val_list:
        raise DataError(f"validation pair set {val_pairs.name!r} has no positives")
    for pairset in (pairs, val_pairs):
        audio_feats.check_coverage(pairset.clip_universe, f"{pairset.name} clips")
        text_feats.check_coverage(pairset.caption_universe, f"{pairset.name} captions")

    model = ProjectionModel.initialize(
        audio_dim=audio_feats.dim,
        text_dim=text_feats.dim,
        embed_dim=cfg.embed_dim,
        tau=cfg.tau,
        seed=cfg.seed,
    )
    params = model.parameters()
    optimizer = Adam(params, lr=cfg.lr0)
    schedule = PlateauSchedule(cfg.lr0, cfg.plateau_factor, cfg.plateau_patience)
    stopper = EarlyStopping(cfg.early_stop_patience)

    val_batches = _validation_batches(val_list, cfg.batch_size, cfg.seed)
    history = History(initial_val_loss=validation_loss(val_batches, audio_feats, text_feats, model))
    best_val = history.initial_val_loss
    best_model = model.copy()

    for epoch in range(1, cfg.max_epochs + 1):
        rng = derived_rng(cfg.seed, "epoch", epoch)
        epoch_losses = []
        for batch in batch_pairs(train_list, cfg.batch_size, rng):
            x, y = _gather(batch, audio_feats, text_feats)
            loss, grads = infonce_gradients(x, y, model)
            optimizer.step(params, grads)
            epoch_losses.append(loss)
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0

        val_loss = validation_loss(val_batches, audio_feats, text_feats, model)
        if val_loss < best_val:
            best_val = val_loss
            best_model = model.copy()
        history.epochs.append(EpochRecord(epoch, train_loss, val_loss, optimizer.lr))

        if stopper.update(val_loss):
            break
        optimizer.lr = schedule.update(val_loss)

    return best_model, history
