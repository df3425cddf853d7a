"""AdamW with decoupled weight decay and a warm-up + cosine learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonFiniteError


@dataclass(frozen=True)
class OptimizerConfig:
    peak_lr: float = 0.002
    warmup_epochs: int = 4
    total_epochs: int = 45
    final_lr: float = 1e-5
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 4

    def __post_init__(self):
        if not 0 < self.final_lr < self.peak_lr:
            raise ConfigError("need 0 < final_lr < peak_lr")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigError("need 0 <= warmup_epochs < total_epochs")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def lr_at(step: int, steps_per_epoch: int, cfg: OptimizerConfig) -> float:
    """Linear warm-up from 0 to ``peak_lr``, cosine decay to ``final_lr``, then flat."""
    if step < 0:
        raise ValueError("step must be >= 0")
    warmup = cfg.warmup_epochs * steps_per_epoch
    total = cfg.total_epochs * steps_per_epoch
    if step < warmup:
        return cfg.peak_lr * step / warmup
    if step >= total:
        return cfg.final_lr
    t = (step - warmup) / (total - warmup)
    return cfg.final_lr + 0.5 * (cfg.peak_lr - cfg.final_lr) * (1.0 + math.cos(math.pi * t))


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict, grads: dict, state: AdamWState, lr: float, cfg: OptimizerConfig):
    """In-place update of the arrays in ``params`` (name -> ndarray).

    ``p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)``.
    A missing gradient counts as zero.
    """
    for name, g in grads.items():
        if g is not None and not np.isfinite(g).all():
            raise NonFiniteError(f"non-finite gradient in parameter block {name!r}")
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + cfg.eps) + cfg.weight_decay * p
        p -= (lr * update).astype(p.dtype)
