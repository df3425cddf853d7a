"""Training objective: cross-entropy plus the Lovasz-Softmax IoU surrogate."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _result
from .cloud import IGNORE_INDEX
from .errors import ConfigError, EmptyInputError


@dataclass(frozen=True)
class LossConfig:
    lovasz_weight: float = 1.0
    ignore_index: int = IGNORE_INDEX

    def __post_init__(self):
        if not np.isfinite(self.lovasz_weight) or self.lovasz_weight < 0:
            raise ConfigError(f"lovasz_weight must be finite and >= 0, got {self.lovasz_weight}")


def _scored(labels, cfg: LossConfig) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    rows = np.flatnonzero(labels != cfg.ignore_index)
    if len(rows) == 0:
        raise EmptyInputError("every point carries the ignore label")
    return rows


def cross_entropy(logits, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Mean negative log-likelihood over points whose label is not ignored."""
    labels = np.asarray(labels).reshape(-1)
    rows = _scored(labels, cfg)
    logp = ad.log_softmax_rows(logits)
    return -ad.mean(ad.take_pairs(logp, rows, labels[rows]))


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Gradient of the Lovasz extension of the Jaccard loss at a sorted 0/1 vector."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_softmax(probs, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Lovasz-Softmax averaged over the classes present in ``labels``.

    Errors are sorted in decreasing order (ties by point index); the sort is
    held fixed when differentiating.
    """
    probs = ad.as_tensor(probs)
    labels = np.asarray(labels).reshape(-1)
    rows = _scored(labels, cfg)
    p = probs.data[rows].astype(np.float64)
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-6:
        raise ValueError("lovasz_softmax expects row-stochastic probabilities")
    y = labels[rows]
    present = np.unique(y)
    loss = 0.0
    grad = np.zeros_like(p)
    for c in present:
        fg = (y == c).astype(np.float64)
        errors = np.abs(fg - p[:, c])
        order = np.argsort(-errors, kind="stable")
        g = lovasz_grad(fg[order])
        loss += float(errors[order] @ g)
        gc = np.empty_like(g)
        gc[order] = g
        grad[:, c] += gc * np.where(fg > 0, -1.0, 1.0)
    loss /= len(present)
    grad /= len(present)

    def backward(gout):
        full = np.zeros(probs.shape, dtype=probs.dtype)
        full[rows] = (grad * gout).astype(probs.dtype)
        probs._accumulate(full)

    return _result(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def total_loss(logits, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    """Cross-entropy plus ``lovasz_weight`` times Lovasz-Softmax on the softmax of ``logits``."""
    ce = cross_entropy(logits, labels, cfg)
    if cfg.lovasz_weight == 0:
        return ce
    return ce + cfg.lovasz_weight * lovasz_softmax(ad.softmax_rows(logits), labels, cfg)
