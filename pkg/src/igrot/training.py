"""AdamW training loop over the in-batch classification objective.

Deterministic by construction: shuffling comes from one seeded generator,
batches run on a single logical thread, and the optimizer mutates parameters
in the fixed ``ModelParams.named`` order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ValidationError
from .losses import LossConfig, bbc_loss
from .network import ModelConfig, ModelParams, check_mode, fuse_queries, init_params, target_features
from .stores import EmbeddingStore, NullTextEmbedding, TripletSet


@dataclass
class TrainConfig:
    epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mode: str = "union"

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 2:
            raise ValidationError("epochs must be >= 1 and batch_size >= 2")
        if min(self.lr, self.weight_decay, self.adam_eps) < 0 or self.lr == 0:
            raise ValidationError("lr must be > 0; weight_decay and adam_eps >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        check_mode(self.mode)


@dataclass
class OptimizerState:
    """First/second moment buffers per parameter plus the shared step count."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: Iterable[tuple[str, Tensor]], state: OptimizerState, cfg: TrainConfig
) -> None:
    """One decoupled-weight-decay Adam update over (name, tensor) pairs.

    Parameters without a gradient are decayed but receive no Adam delta.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, tensor in params:
        grad = tensor.grad
        if grad is not None and not np.isfinite(grad).all():
            raise ValidationError(f"non-finite gradient for parameter {name}")
        tensor.data *= 1.0 - cfg.lr * cfg.weight_decay
        if grad is None:
            continue
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        m, v = state.m[name], state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        tensor.data -= cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def _gather_batch(
    batch: list,
    images: EmbeddingStore,
    texts: EmbeddingStore,
    null_text: NullTextEmbedding,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    e_r = np.stack([images.vector(t.query_image_id) for t in batch]).astype(np.float64)
    e_t = np.stack([images.vector(t.target_image_id) for t in batch]).astype(np.float64)
    null_vec = null_text.vector.astype(np.float64)
    e_c = np.stack(
        [
            null_vec if t.caption_id is None else texts.vector(t.caption_id).astype(np.float64)
            for t in batch
        ]
    )
    return e_r, e_c, e_t


def train(
    triplets: TripletSet,
    images: EmbeddingStore,
    texts: EmbeddingStore,
    null_text: NullTextEmbedding,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> tuple[ModelParams, list[dict]]:
    """Train from scratch; returns the parameters and the per-batch loss log."""
    if not triplets:
        raise ValidationError("training set is empty")
    for name, dim in (("images", images.dim), ("texts", texts.dim), ("null text", null_text.dim)):
        if dim != model_cfg.dim:
            raise ValidationError(f"{name} dim {dim} != model dim {model_cfg.dim}")

    params = init_params(model_cfg)
    state = OptimizerState()
    loss_cfg = LossConfig(tau=model_cfg.tau)
    eta = null_text.vector.astype(np.float64)
    rng = np.random.default_rng(train_cfg.seed)
    log: list[dict] = []

    for epoch in range(train_cfg.epochs):
        order = rng.permutation(len(triplets))
        batches = [
            [triplets[i] for i in order[lo : lo + train_cfg.batch_size]]
            for lo in range(0, len(triplets), train_cfg.batch_size)
        ]
        if len(batches[-1]) < 2:
            batches.pop()  # a single-example batch carries no contrastive signal
        for batch_idx, batch in enumerate(batches):
            e_r, e_c, e_t = _gather_batch(batch, images, texts, null_text)
            params.zero_grads()
            with Tape() as tape:
                fused = fuse_queries(e_r, e_c, params, model_cfg)
                targets = target_features(train_cfg.mode, e_t, eta, params, model_cfg)
                loss = bbc_loss(fused, targets, loss_cfg)
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                ids = [t.query_image_id for t in batch]
                raise ValidationError(f"non-finite loss at epoch {epoch} on batch {ids}")
            tape.backward(loss)
            adamw_step(params.named(), state, train_cfg)
            log.append({"epoch": epoch, "batch": batch_idx, "loss": loss_value})
    log.append({"event": "done", "epochs": train_cfg.epochs, "steps": state.step})
    return params, log
