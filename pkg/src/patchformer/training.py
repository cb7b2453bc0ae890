"""Supervised training: soft-label cross-entropy, AdamW, warmup + cosine.

The loop is deterministic for a fixed seed: shuffling, CutMix pairing and box
draws, dropout masks, and parameter init all come from named substreams of the
run seed. History lines carry no wall-clock data, so identical runs produce
byte-identical history files and checkpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .augment import CutMixConfig, LabeledImage, cutmix
from .images import ImageBuffer
from .model import PatchClassifier, save_checkpoint
from .seeding import substream
from .tensor import Graph, Tensor, backward

__all__ = [
    "TrainConfig",
    "OptimState",
    "NonFiniteLossError",
    "lr_at",
    "adamw_step",
    "cross_entropy_soft",
    "evaluate",
    "train",
]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    weight_decay: float = 1e-4
    batch_size: int = 256
    epochs: int = 100
    warmup_epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    cutmix: bool = True
    cutmix_alpha: float = 1.0
    schedule: str = "cosine"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ValueError(
                f"warmup_epochs must lie in [0, epochs], got "
                f"{self.warmup_epochs} vs {self.epochs}"
            )
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.cutmix_alpha <= 0:
            raise ValueError(f"cutmix_alpha must be positive, got {self.cutmix_alpha}")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> lr over warmup_epochs (evaluated at epoch + 1), then
    cosine decay to zero over the remaining epochs."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if epoch < cfg.warmup_epochs:
        return cfg.lr * (epoch + 1) / cfg.warmup_epochs
    if cfg.schedule == "constant":
        return cfg.lr
    remaining = cfg.epochs - cfg.warmup_epochs
    t = (epoch - cfg.warmup_epochs) / remaining
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * t))


class NonFiniteLossError(RuntimeError):
    """Training produced a NaN/inf loss; carries where it happened."""

    def __init__(self, epoch: int, batch: int, loss: float):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss} at epoch {epoch}, batch {batch}"
        )


@dataclass
class OptimState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, named_params: list[tuple[str, Tensor]]) -> "OptimState":
        return cls(
            m=[np.zeros_like(p.data) for _, p in named_params],
            v=[np.zeros_like(p.data) for _, p in named_params],
        )


def adamw_step(
    named_params: list[tuple[str, Tensor]],
    state: OptimState,
    lr_t: float,
    cfg: TrainConfig,
) -> None:
    """Decoupled update: param -= lr_t * m_hat / (sqrt(v_hat) + eps)
    + lr_t * weight_decay * param. Missing gradients count as zero."""
    state.t += 1
    bc1 = 1.0 - cfg.beta1**state.t
    bc2 = 1.0 - cfg.beta2**state.t
    for (name, p), m, v in zip(named_params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * np.square(g)
        m_hat = m / bc1
        v_hat = v / bc2
        p.data = p.data - lr_t * (
            m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        ) - lr_t * cfg.weight_decay * p.data


def cross_entropy_soft(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of -sum_k target_k * log softmax(logits)_k."""
    targets = np.asarray(targets, dtype=logits.data.dtype)
    if targets.shape != logits.shape:
        raise T.ShapeError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    sums = targets.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ValueError("target rows must each sum to 1")
    logp = T.log_softmax(logits, axis=-1)
    per_sample = T.tensor_sum(logp * Tensor(targets), axis=-1)
    return T.neg(T.mean(per_sample))


def _batches(n: int, batch_size: int):
    for start in range(0, n, batch_size):
        yield np.arange(start, min(start + batch_size, n))


def evaluate(
    model: PatchClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    batch_size: int = 64,
) -> tuple[float, np.ndarray]:
    """Accuracy and class probabilities in evaluation mode (no gradients,
    no dropout)."""
    n = len(images)
    if n == 0:
        return float("nan"), np.zeros((0, model.cfg.num_classes))
    probs = []
    for idx in _batches(n, batch_size):
        logits = model.forward_images(images[idx], training=False)
        probs.append(model.predict(logits).data)
    probs = np.concatenate(probs, axis=0)
    acc = float(np.mean(np.argmax(probs, axis=-1) == labels))
    return acc, probs


def _cutmix_batch(
    xb: np.ndarray,
    targets: np.ndarray,
    alpha: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    cfg = CutMixConfig(alpha=alpha)
    partners = rng.permutation(len(xb))
    out_x = np.empty_like(xb)
    out_t = np.empty_like(targets)
    for i in range(len(xb)):
        j = int(partners[i])
        mixed, _ = cutmix(
            LabeledImage(ImageBuffer(xb[i]), targets[i]),
            LabeledImage(ImageBuffer(xb[j]), targets[j]),
            cfg,
            rng,
        )
        out_x[i] = mixed.image.pixels
        out_t[i] = mixed.label
    return out_x, out_t


def train(
    model: PatchClassifier,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    cfg: TrainConfig,
    history_path: Path | str | None = None,
    best_path: Path | str | None = None,
    last_path: Path | str | None = None,
    emit: Callable[[str], None] | None = None,
) -> list[dict]:
    """Run the full loop; returns per-epoch history entries.

    Each entry holds epoch, lr, train_loss (CutMix-augmented batches),
    train_acc and val_acc (clean data, evaluation mode). Checkpoints go to
    best_path on validation improvement and last_path at the end.
    """
    num_classes = model.cfg.num_classes
    if len(x_train) == 0:
        raise ValueError("empty training split")
    eye = np.eye(num_classes, dtype=x_train.dtype)
    params = model.parameters()
    state = OptimState.init(params)
    shuffle_rng = substream(cfg.seed, "shuffle")
    cutmix_rng = substream(cfg.seed, "cutmix")
    dropout_rng = substream(cfg.seed, "dropout")

    history: list[dict] = []
    best_val = -math.inf
    history_file = None
    if history_path is not None:
        history_file = open(history_path, "w", newline="\n")
    try:
        for epoch in range(cfg.epochs):
            lr_t = lr_at(epoch, cfg)
            perm = shuffle_rng.permutation(len(x_train))
            loss_sum = 0.0
            for batch_i, idx in enumerate(_batches(len(perm), cfg.batch_size)):
                take = perm[idx]
                xb = x_train[take]
                targets = eye[y_train[take]]
                if cfg.cutmix and len(take) >= 2:
                    xb, targets = _cutmix_batch(
                        xb, targets, cfg.cutmix_alpha, cutmix_rng
                    )
                with Graph() as graph:
                    logits = model.forward_images(xb, training=True, rng=dropout_rng)
                    loss = cross_entropy_soft(logits, targets)
                    loss_value = float(loss.data)
                    if not math.isfinite(loss_value):
                        raise NonFiniteLossError(epoch, batch_i, loss_value)
                    for _, p in params:
                        p.grad = None
                    backward(loss, graph)
                adamw_step(params, state, lr_t, cfg)
                loss_sum += loss_value * len(take)

            train_acc, _ = evaluate(model, x_train, y_train, cfg.batch_size)
            if len(x_val):
                val_acc, _ = evaluate(model, x_val, y_val, cfg.batch_size)
            else:
                val_acc = None
            entry = {
                "epoch": epoch,
                "lr": lr_t,
                "train_loss": loss_sum / len(x_train),
                "train_acc": train_acc,
                "val_acc": val_acc,
            }
            history.append(entry)
            line = json.dumps(entry, sort_keys=True)
            if history_file is not None:
                history_file.write(line + "\n")
                history_file.flush()
            if emit is not None:
                emit(line)
            if best_path is not None and val_acc is not None and val_acc > best_val:
                best_val = val_acc
                save_checkpoint(best_path, model)
        if last_path is not None:
            save_checkpoint(last_path, model)
        if best_path is not None and best_val == -math.inf:
            save_checkpoint(best_path, model)  # no val split: best = last
    finally:
        if history_file is not None:
            history_file.close()
    return history
