"""Projection heads and the symmetric contrastive objective.

Two trainable affine maps take precomputed audio/text feature vectors into a
shared embedding space. For a batch of M matched pairs, z_ij is the cosine
similarity of projected audio i and projected text j, and the loss is the
symmetric cross entropy

    L = -(1/M) * sum_i [ log softmax_row(Z/tau)_ii + log softmax_col(Z/tau)_ii ]

computed with max-subtraction for numerical stability. Gradients are exact
and analytic: softmax -> cosine -> affine, all in float64 numpy.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from gradrel.seeding import derived_rng

EMBED_DIM_DEFAULT = 300
TAU_DEFAULT = 0.07


@dataclass
class ProjectionModel:
    """Affine audio/text maps into a shared space, plus the temperature."""

    audio_weight: np.ndarray  # (embed_dim, audio_dim)
    audio_bias: np.ndarray    # (embed_dim,)
    text_weight: np.ndarray   # (embed_dim, text_dim)
    text_bias: np.ndarray     # (embed_dim,)
    tau: float = TAU_DEFAULT

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError(f"temperature must be > 0, got {self.tau}")
        for name, arr in self.parameters().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite parameter {name}")

    @classmethod
    def initialize(cls, audio_dim: int, text_dim: int,
                   embed_dim: int = EMBED_DIM_DEFAULT,
                   tau: float = TAU_DEFAULT, seed: int = 0) -> "ProjectionModel":
        rng = derived_rng(seed, "init-projection")
        def glorot(fan_out: int, fan_in: int) -> np.ndarray:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_out, fan_in))
        return cls(
            audio_weight=glorot(embed_dim, audio_dim),
            audio_bias=np.zeros(embed_dim),
            text_weight=glorot(embed_dim, text_dim),
            text_bias=np.zeros(embed_dim),
            tau=tau,
        )

    @property
    def embed_dim(self) -> int:
        return self.audio_weight.shape[0]

    def parameters(self) -> dict[str, np.ndarray]:
        return {
            "audio_weight": self.audio_weight,
            "audio_bias": self.audio_bias,
            "text_weight": self.text_weight,
            "text_bias": self.text_bias,
        }

    def copy(self) -> "ProjectionModel":
        return ProjectionModel(
            audio_weight=self.audio_weight.copy(),
            audio_bias=self.audio_bias.copy(),
            text_weight=self.text_weight.copy(),
            text_bias=self.text_bias.copy(),
            tau=self.tau,
        )

    def project_audio(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.audio_weight.T + self.audio_bias

    def project_text(self, feats: np.ndarray) -> np.ndarray:
        return feats @ self.text_weight.T + self.text_bias


def _normalize_rows(m: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm {what} row at index {int(np.argmin(norms))}")
    return m / norms[:, None], norms


def cosine_similarity_matrix(audio_emb: np.ndarray, text_emb: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; entry (i, j) compares audio i to text j."""
    a_hat, _ = _normalize_rows(np.asarray(audio_emb, dtype=np.float64), "audio")
    t_hat, _ = _normalize_rows(np.asarray(text_emb, dtype=np.float64), "text")
    return a_hat @ t_hat.T


def _log_softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    shifted = scores - scores.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def infonce_loss(z: np.ndarray, tau: float) -> float:
    """Symmetric cross entropy over a square similarity matrix."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != z.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {z.shape}")
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    m = z.shape[0]
    s = z / tau
    diag_row = np.diagonal(_log_softmax(s, axis=1))
    diag_col = np.diagonal(_log_softmax(s, axis=0))
    return float(-(diag_row.sum() + diag_col.sum()) / m + 0.0)


def _softmax(scores: np.ndarray, axis: int) -> np.ndarray:
    shifted = np.exp(scores - scores.max(axis=axis, keepdims=True))
    return shifted / shifted.sum(axis=axis, keepdims=True)


def infonce_gradients(
    audio_feats: np.ndarray,
    text_feats: np.ndarray,
    model: ProjectionModel,
) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients w.r.t. the four affine parameters for one
    batch of matched (audio, text) feature rows."""
    x = np.asarray(audio_feats, dtype=np.float64)
    y = np.asarray(text_feats, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"batch sizes differ: {x.shape[0]} vs {y.shape[0]}")
    m = x.shape[0]

    a = model.project_audio(x)
    t = model.project_text(y)
    a_hat, a_norm = _normalize_rows(a, "projected audio")
    t_hat, t_norm = _normalize_rows(t, "projected text")
    z = a_hat @ t_hat.T
    s = z / model.tau

    loss = float(-(np.diagonal(_log_softmax(s, axis=1)).sum()
                   + np.diagonal(_log_softmax(s, axis=0)).sum()) / m)

    # dL/dZ: row and column softmaxes each contribute (softmax - identity).
    p_row = _softmax(s, axis=1)
    p_col = _softmax(s, axis=0)
    grad_z = (p_row + p_col - 2.0 * np.eye(m)) / (m * model.tau)

    # Through the cosine: z_ij = <a_hat_i, t_hat_j>, then through the row
    # normalization a_hat = a / |a| (gradient is projected off the radial
    # direction and scaled by 1/|a|).
    grad_a_hat = grad_z @ t_hat
    grad_t_hat = grad_z.T @ a_hat
    grad_a = (grad_a_hat - (grad_a_hat * a_hat).sum(axis=1, keepdims=True) * a_hat) / a_norm[:, None]
    grad_t = (grad_t_hat - (grad_t_hat * t_hat).sum(axis=1, keepdims=True) * t_hat) / t_norm[:, None]

    return loss, {
        "audio_weight": grad_a.T @ x,
        "audio_bias": grad_a.sum(axis=0),
        "text_weight": grad_t.T @ y,
        "text_bias": grad_t.sum(axis=0),
    }


def batch_loss(audio_feats: np.ndarray, text_feats: np.ndarray,
               model: ProjectionModel) -> float:
    """Loss only, for validation passes."""
    a = model.project_audio(np.asarray(audio_feats, dtype=np.float64))
    t = model.project_text(np.asarray(text_feats, dtype=np.float64))
    return infonce_loss(cosine_similarity_matrix(a, t), model.tau)


# --- checkpoint file ---

def save_checkpoint(path: str | Path, model: ProjectionModel,
                    config: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        np.savez(
            f,
            audio_weight=model.audio_weight,
            audio_bias=model.audio_bias,
            text_weight=model.text_weight,
            text_bias=model.text_bias,
            tau=np.float64(model.tau),
            config_json=np.bytes_(json.dumps(config or {}, sort_keys=True).encode("utf-8")),
        )
    os.replace(tmp, path)


def load_checkpoint(path: str | Path) -> tuple[ProjectionModel, dict]:
    with np.load(path) as data:
        model = ProjectionModel(
            audio_weight=data["audio_weight"],
            audio_bias=data["audio_bias"],
            text_weight=data["text_weight"],
            text_bias=data["text_bias"],
            tau=float(data["tau"]),
        )
        config = json.loads(bytes(data["config_json"]).decode("utf-8"))
    return model, config
