"""MixMatch training of a small softmax classifier on raw vectors."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import TrainingError, ValidationError
from .nn import MLP, Adam, init_mlp, softmax
from .store import EmbeddingStore

LOG_FLOOR = 1e-12
SAMPLER_MODES = ("ood_weighted", "uniform")


@dataclass(frozen=True)
class MixMatchConfig:
    k_augment: int = 2
    temperature: float = 0.5
    mixup_alpha: float = 0.75
    lambda_u: float = 75.0
    rampup_steps: int = 500
    batch_labeled: int = 32
    batch_unlabeled: int = 32
    learning_rate: float = 3e-4
    epochs: int = 10
    steps_per_epoch: int = 100
    augment_sigma: float = 0.3
    seed: int = 0
    sampler_mode: str = "ood_weighted"
    select_best_val: bool = True
    ema_decay: float = 0.999
    hidden: tuple = (64,)
    activation: str = "tanh"

    def validate(self):
        if self.k_augment < 1:
            raise ValidationError("k_augment must be >= 1")
        if not self.temperature > 0 or not self.mixup_alpha > 0 or not self.learning_rate > 0:
            raise ValidationError("temperature, mixup_alpha and learning_rate must be > 0")
        if self.lambda_u < 0 or self.rampup_steps < 0 or self.augment_sigma < 0:
            raise ValidationError("lambda_u, rampup_steps and augment_sigma must be >= 0")
        if self.batch_labeled < 1 or self.batch_unlabeled < 0:
            raise ValidationError("batch_labeled must be >= 1, batch_unlabeled >= 0")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValidationError("epochs must be >= 0 and steps_per_epoch >= 1")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValidationError("ema_decay must lie in [0, 1)")
        if self.sampler_mode not in SAMPLER_MODES:
            raise ValidationError(f"sampler_mode must be one of {SAMPLER_MODES}")

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


def sharpen(p, T):
    """Temperature sharpening ``p**(1/T)`` renormalized, row-wise on 2-D input."""
    p = np.asarray(p, dtype=np.float64)
    if not T > 0:
        raise ValidationError("temperature must be > 0")
    # log domain so tiny T does not underflow every entry
    with np.errstate(divide="ignore"):
        logp = np.log(p) / T
    logp = logp - np.max(logp, axis=-1, keepdims=True)
    out = np.exp(logp)
    return out / out.sum(axis=-1, keepdims=True)


def guess_label(classifier, x_u, k, T, augment_sigma, rng):
    """Sharpened mean prediction over ``k`` jittered copies of ``x_u``.

    ``classifier`` maps a batch of inputs to class probabilities.
    """
    if k < 1:
        raise ValidationError("k must be >= 1")
    x_u = np.atleast_2d(np.asarray(x_u, dtype=np.float64))
    preds = [classifier(x_u + augment_sigma * rng.standard_normal(x_u.shape)) for _ in range(k)]
    return sharpen(np.mean(preds, axis=0), T)


def mixup(x1, t1, x2, t2, alpha, rng, lam=None):
    """Convex mix dominated by the first argument: ``lam' = max(lam, 1 - lam)``.

    ``lam`` may be passed directly (otherwise drawn from Beta(alpha, alpha));
    for batched inputs it may be one value per row.
    """
    if lam is None:
        n = 1 if np.ndim(x1) == 1 else np.shape(x1)[0]
        lam = rng.beta(alpha, alpha, size=n)
        if np.ndim(x1) == 1:
            lam = lam[0]
    lam = np.maximum(lam, 1.0 - np.asarray(lam, dtype=np.float64))
    lx = lam if np.ndim(lam) == 0 else lam[:, None]
    x_mix = lx * np.asarray(x1) + (1.0 - lx) * np.asarray(x2)
    t_mix = lx * np.asarray(t1) + (1.0 - lx) * np.asarray(t2)
    return x_mix, t_mix, lam


def labeled_loss(targets, preds) -> float:
    """Mean cross-entropy of predicted distributions against soft targets."""
    targets = np.atleast_2d(targets)
    preds = np.atleast_2d(preds)
    return float(np.mean(-np.sum(targets * np.log(np.maximum(preds, LOG_FLOOR)), axis=1)))


def unlabeled_loss(targets, preds) -> float:
    """Mean over rows of squared L2 distance divided by the class count."""
    targets = np.atleast_2d(targets)
    preds = np.atleast_2d(preds)
    return float(np.mean(np.sum((targets - preds) ** 2, axis=1)) / targets.shape[1])


def objective_grad(model: MLP, x_l, t_l, x_u, q_u, lambda_u):
    """Combined loss ``L_l + lambda_u * L_u`` and its gradient.

    Targets ``t_l`` and ``q_u`` are constants (no gradient flows into them).
    Returns ``(loss, loss_l, loss_u, grads)``.
    """
    n_l, n_u = x_l.shape[0], x_u.shape[0]
    logits, cache = model.forward(np.vstack([x_l, x_u]))
    p = softmax(logits)
    p_l, p_u = p[:n_l], p[n_l:]
    C = p.shape[1]
    loss_l = labeled_loss(t_l, p_l)
    loss_u = unlabeled_loss(q_u, p_u) if n_u else 0.0

    dlogits = np.zeros_like(logits)
    # d/dlogit of -sum t log softmax with the floor inactive = p*sum(t) - t
    floored = p_l < LOG_FLOOR
    dp_l = -np.where(floored, 0.0, t_l / np.maximum(p_l, LOG_FLOOR)) / n_l
    dlogits[:n_l] = p_l * (dp_l - np.sum(p_l * dp_l, axis=1, keepdims=True))
    if n_u:
        dp_u = lambda_u * 2.0 * (p_u - q_u) / (n_u * C)
        dlogits[n_l:] = p_u * (dp_u - np.sum(p_u * dp_u, axis=1, keepdims=True))
    grads = model.backward(cache, dlogits)
    return loss_l + lambda_u * loss_u, loss_l, loss_u, grads


def build_classifier(raw_dim, n_classes, config: MixMatchConfig, rng) -> MLP:
    sizes = [raw_dim, *config.hidden, n_classes]
    acts = [config.activation] * len(config.hidden) + ["identity"]
    return init_mlp(sizes, acts, rng)


def predict_proba(model: MLP, X) -> np.ndarray:
    return softmax(model(np.asarray(X, dtype=np.float64)))


def predict(model: MLP, X) -> np.ndarray:
    return np.argmax(model(np.asarray(X, dtype=np.float64)), axis=1)


class TraceRow(NamedTuple):
    step: int
    loss_l: float
    loss_u: float
    lambda_u: float
    acc_val: float
    mean_ood_drawn: float


class SemiSlResult(NamedTuple):
    classifier: MLP
    trace: list


def train_semisl(
    labeled: EmbeddingStore,
    unlabeled: EmbeddingStore,
    sampler,
    config: MixMatchConfig,
    validation: EmbeddingStore | None = None,
    ood_scores: dict | None = None,
    n_classes: int | None = None,
) -> SemiSlResult:
    """MixMatch loop.

    Returns an exponential moving average of the weights. With a validation
    store and ``select_best_val`` it is the average at the step with the
    highest validation accuracy (first one on ties).
    ``sampler`` exposes ``draw(batch_size, rng) -> list of ids`` over the
    unlabeled store. ``ood_scores`` (id -> score) only feeds the trace.
    """
    config.validate()
    if len(labeled) == 0:
        raise ValidationError("labeled store is empty")
    C = n_classes or max(labeled.n_classes, validation.n_classes if validation else 0)
    if C < 2:
        raise ValidationError("need at least two classes")
    rng = np.random.default_rng(config.seed)
    model = build_classifier(labeled.dim, C, config, rng)
    opt = Adam(model.params, lr=config.learning_rate)
    ema = model.copy()  # evaluated and returned; ema_decay=0 tracks the raw weights

    X_l = labeled.vectors
    Y_l = np.eye(C)[labeled.labels]
    X_pool = unlabeled.vectors if len(unlabeled) else np.zeros((0, labeled.dim))
    use_unlabeled = config.batch_unlabeled > 0 and len(unlabeled) > 0 and config.lambda_u > 0
    if validation is not None and len(validation):
        X_val, y_val = validation.vectors, validation.labels
    else:
        X_val = None
    trace = []
    best_acc, best_params = -1.0, None
    total = config.epochs * config.steps_per_epoch
    sig = config.augment_sigma
    for step in range(total):
        lam_u = config.lambda_u * (min(1.0, step / config.rampup_steps) if config.rampup_steps else 1.0)
        idx_l = rng.integers(X_l.shape[0], size=config.batch_labeled)
        xl = X_l[idx_l] + sig * rng.standard_normal((config.batch_labeled, X_l.shape[1]))
        tl = Y_l[idx_l]
        mean_ood = float("nan")
        if use_unlabeled:
            ids = sampler.draw(config.batch_unlabeled, rng)
            xu0 = X_pool[unlabeled.index_of(ids)]
            if ood_scores is not None:
                mean_ood = float(np.mean([ood_scores[i] for i in ids]))
            augs = [xu0 + sig * rng.standard_normal(xu0.shape) for _ in range(config.k_augment)]
            q = sharpen(np.mean([predict_proba(model, a) for a in augs], axis=0), config.temperature)
            xu = np.vstack(augs)
            qu = np.tile(q, (config.k_augment, 1))
            W_x = np.vstack([xl, xu])
            W_t = np.vstack([tl, qu])
            perm = rng.permutation(W_x.shape[0])
            W_x, W_t = W_x[perm], W_t[perm]
            nl = xl.shape[0]
            lam = rng.beta(config.mixup_alpha, config.mixup_alpha, size=W_x.shape[0])
            x_mix, t_mix, _ = mixup(np.vstack([xl, xu]), np.vstack([tl, qu]), W_x, W_t, config.mixup_alpha, rng, lam)
            x_l_mix, t_l_mix = x_mix[:nl], t_mix[:nl]
            x_u_mix, t_u_mix = x_mix[nl:], t_mix[nl:]
        else:
            x_l_mix, t_l_mix = xl, tl
            x_u_mix, t_u_mix = np.zeros((0, xl.shape[1])), np.zeros((0, C))
        loss, loss_l, loss_u, grads = objective_grad(model, x_l_mix, t_l_mix, x_u_mix, t_u_mix, lam_u)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        opt.step(model.params, grads)
        # warmup keeps early averages from being dominated by the random init
        d = min(config.ema_decay, (1.0 + step) / (10.0 + step))
        for pe, p in zip(ema.params, model.params):
            pe *= d
            pe += (1.0 - d) * p
        acc = float(np.mean(predict(ema, X_val) == y_val)) if X_val is not None else float("nan")
        trace.append(TraceRow(step, loss_l, loss_u, lam_u, acc, mean_ood))
        if config.select_best_val and X_val is not None and acc > best_acc:
            best_acc, best_params = acc, [p.copy() for p in ema.params]
    if best_params is not None:
        ema = MLP(best_params, list(ema.activations))
    return SemiSlResult(ema, trace)
