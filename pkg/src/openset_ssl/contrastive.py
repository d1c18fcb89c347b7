"""Contrastive encoder training with epsilon-neighbourhood positives.

Batch layout: rows ``0..N-1`` are originals, rows ``N..2N-1`` their jittered
twins, so the twin of row ``i`` is ``(i + N) % 2N``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, TrainingError, ValidationError, ZeroNormError
from .nn import MLP, Adam, init_mlp
from .store import EmbeddingStore


@dataclass(frozen=True)
class SslConfig:
    epsilon: float = 0.05
    tau: float = 0.5
    learning_rate: float = 3e-4
    batch_n: int = 32
    epochs: int = 10
    augment_sigma: float = 0.3
    seed: int = 0
    hidden: tuple = (64, 64)
    latent_dim: int = 16
    activation: str = "tanh"
    normalize_output: bool = True

    def validate(self):
        if not 0.0 <= self.epsilon <= 2.0:
            raise ValidationError("epsilon must lie in [0, 2]")
        if not self.tau > 0 or not self.learning_rate > 0:
            raise ValidationError("tau and learning_rate must be > 0")
        if self.batch_n < 1 or self.epochs < 0 or self.latent_dim < 1:
            raise ValidationError("batch_n, latent_dim must be >= 1 and epochs >= 0")
        if self.augment_sigma < 0:
            raise ValidationError("augment_sigma must be >= 0")


@dataclass
class ContrastiveBatch:
    embeddings: np.ndarray  # (2N, D)
    twin: np.ndarray = field(default=None)

    def __post_init__(self):
        n2 = self.embeddings.shape[0]
        if n2 % 2:
            raise ValidationError("contrastive batch size must be even")
        if self.twin is None:
            self.twin = (np.arange(n2) + n2 // 2) % n2
        if not np.array_equal(self.twin[self.twin], np.arange(n2)) or np.any(self.twin == np.arange(n2)):
            raise ValidationError("twin map must be a perfect matching")

    def __len__(self):
        return self.embeddings.shape[0]


def cosine_sim(z_i, z_j) -> float:
    z_i = np.asarray(z_i, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    ni, nj = np.linalg.norm(z_i), np.linalg.norm(z_j)
    if ni == 0.0 or nj == 0.0:
        raise ZeroNormError("cosine similarity of a zero vector")
    return float(np.clip(np.dot(z_i, z_j) / (ni * nj), -1.0, 1.0))


def _unit_rows(Z):
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise ZeroNormError(f"{int(np.sum(norms == 0.0))} embedding(s) have zero norm")
    return Z / norms[:, None], norms


def similarity_matrix(Z):
    U, _ = _unit_rows(np.asarray(Z, dtype=np.float64))
    return U @ U.T


def positive_mask(batch: ContrastiveBatch, epsilon) -> np.ndarray:
    """Boolean (2N, 2N) matrix; row i marks the positives of anchor i."""
    S = np.clip(similarity_matrix(batch.embeddings), -1.0, 1.0)
    n2 = len(batch)
    mask = S >= 1.0 - epsilon
    mask[np.arange(n2), batch.twin] = True
    np.fill_diagonal(mask, False)
    return mask


def positive_set(anchor: int, batch: ContrastiveBatch, epsilon) -> set:
    return set(np.flatnonzero(positive_mask(batch, epsilon)[anchor]).tolist())


def _as_mask(positives, n2):
    if isinstance(positives, np.ndarray) and positives.dtype == bool:
        return positives
    mask = np.zeros((n2, n2), dtype=bool)
    for i, js in enumerate(positives):
        mask[i, list(js)] = True
    return mask


def ntxent_terms(Z, mask, tau):
    """Loss and dL/dZ for a fixed positive mask.

    Loss is the mean over all (anchor, positive) pairs of
    ``logsumexp_{k != i} S_ik / tau - S_ij / tau``.
    """
    n2 = Z.shape[0]
    if np.any(np.diag(mask)):
        raise ContractError("an anchor cannot be its own positive")
    counts = mask.sum(axis=1)
    if np.any(counts == 0):
        raise ContractError(f"anchor {int(np.argmin(counts))} has an empty positive set")
    U, norms = _unit_rows(Z)
    S = U @ U.T
    logits = S / tau
    np.fill_diagonal(logits, -np.inf)
    lse = logsumexp(logits, axis=1)
    n_pairs = counts.sum()
    loss = float((counts @ lse - np.sum(logits[mask])) / n_pairs)

    soft = np.exp(logits - lse[:, None])  # diagonal is exp(-inf) = 0
    G = (counts[:, None] * soft - mask) / (n_pairs * tau)
    dU = (G + G.T) @ U
    dZ = (dU - U * np.sum(U * dU, axis=1, keepdims=True)) / norms[:, None]
    return loss, dZ


def ntxent_loss(batch: ContrastiveBatch, positives, tau) -> float:
    """``positives`` is either a boolean mask or one index collection per anchor."""
    mask = _as_mask(positives, len(batch))
    return ntxent_terms(np.asarray(batch.embeddings, dtype=np.float64), mask, tau)[0]


def build_encoder(raw_dim, config: SslConfig, rng) -> MLP:
    sizes = [raw_dim, *config.hidden, config.latent_dim]
    acts = [config.activation] * len(config.hidden) + ["identity"]
    return init_mlp(sizes, acts, rng)


def loss_gradient(encoder: MLP, raw_batch, config: SslConfig):
    """Return ``(loss, grads)`` for one batch.

    ``raw_batch`` is ``(X, X_aug)``, two (N, raw_dim) arrays. Positive sets
    come from the current embeddings and are held fixed while differentiating.
    """
    X, X_aug = raw_batch
    Z, cache = encoder.forward(np.vstack([X, X_aug]))
    batch = ContrastiveBatch(Z)
    mask = positive_mask(batch, config.epsilon)
    loss, dZ = ntxent_terms(Z, mask, config.tau)
    return loss, encoder.backward(cache, dZ)


def embed(encoder: MLP, X, normalize=True) -> np.ndarray:
    Z = encoder(np.asarray(X, dtype=np.float64))
    if normalize:
        Z, _ = _unit_rows(Z)
    return Z


class SslResult(NamedTuple):
    encoder: MLP
    embeddings: EmbeddingStore
    losses: list


def train_encoder(store: EmbeddingStore, config: SslConfig, train_splits=("labeled", "unlabeled")) -> SslResult:
    """Train on ``train_splits`` with Adam; embed every record of ``store``."""
    config.validate()
    if len(store) == 0:
        raise ValidationError("cannot train on an empty store")
    rng = np.random.default_rng(config.seed)
    encoder = build_encoder(store.dim, config, rng)
    X = store.vectors[store.split_mask(*train_splits)]
    if X.shape[0] < 2:
        raise ValidationError("need at least 2 training records")
    opt = Adam(encoder.params, lr=config.learning_rate)
    losses = []
    n = X.shape[0]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = []
        for step, start in enumerate(range(0, n, config.batch_n)):
            idx = order[start : start + config.batch_n]
            if idx.size < 2:
                continue
            xb = X[idx]
            xa = xb + config.augment_sigma * rng.standard_normal(xb.shape)
            loss, grads = loss_gradient(encoder, (xb, xa), config)
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {step}")
            opt.step(encoder.params, grads)
            epoch_loss.append(loss)
        losses.append(float(np.mean(epoch_loss)) if epoch_loss else float("nan"))
    Z = embed(encoder, store.vectors, normalize=config.normalize_output)
    return SslResult(encoder, store.with_vectors(Z), losses)


def config_dict(config: SslConfig):
    d = asdict(config)
    d["hidden"] = list(config.hidden)
    return d
