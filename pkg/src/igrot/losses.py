"""Cosine similarity and the batch-based classification loss.

The loss is softmax cross-entropy over in-batch cosine similarities scaled by
a temperature: row i of the similarity matrix is classified against target i.
Swapping the raw target rows for gated interpolation features gives the
updated objective without any change to this code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ValidationError


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.01

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValidationError("tau must be > 0")


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1] against rounding."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def _row_normalize(x: Tensor) -> Tensor:
    norms = ad.sqrt(ad.sum_lastdim(ad.mul(x, x), keepdims=True))
    return ad.div(x, norms)


def bbc_loss(fused: Tensor, targets: Tensor, cfg: LossConfig = LossConfig()) -> Tensor:
    """In-batch classification loss over cosine similarities (log-sum-exp form).

    loss = -(1/B) sum_i [ sim(fused_i, targets_i)/tau
                          - logsumexp_j sim(fused_i, targets_j)/tau ]
    """
    if fused.data.ndim != 2 or targets.data.ndim != 2:
        raise ValidationError("bbc_loss expects (B, D) matrices")
    if fused.shape != targets.shape:
        raise ValidationError(f"shape mismatch {fused.shape} vs {targets.shape}")
    if fused.shape[0] < 1:
        raise ValidationError("batch must be non-empty")
    for name, t in (("fused", fused), ("targets", targets)):
        if not np.isfinite(t.data).all():
            raise ValidationError(f"non-finite values in {name}")
        if (np.linalg.norm(t.data, axis=1) == 0.0).any():
            raise ValidationError(f"zero-norm row in {name}")
    sims = ad.matmul(_row_normalize(fused), ad.transpose_last2(_row_normalize(targets)))
    logits = ad.scale(sims, 1.0 / cfg.tau)
    per_query = ad.sub(ad.logsumexp_lastdim(logits), ad.take_diag(logits))
    return ad.reduce_mean(per_query, axis=0)


def bbc_loss_from_sims(sims: np.ndarray, tau: float) -> float:
    """Loss evaluated directly on a precomputed similarity matrix."""
    sims = np.asarray(sims, dtype=np.float64)
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ValidationError("similarity matrix must be square")
    if tau <= 0:
        raise ValidationError("tau must be > 0")
    logits = sims / tau
    m = logits.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).squeeze(1)
    return float(np.mean(lse - np.diagonal(logits)))
