"""AdamW with decoupled weight decay and the warmup-plus-cosine schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping

import numpy as np

from .autodiff import Tensor
from .errors import ContractError, TrainingAbort

__all__ = ["TrainConfig", "AdamWState", "adamw_step", "lr_at"]


@dataclass
class TrainConfig:
    lr_peak: float = 2e-5  # tuned for frozen-encoder inputs at full scale
    weight_decay: float = 0.1
    warmup_epochs: int = 20
    max_epochs: int = 200
    batch_size: int = 32
    early_stop_patience: int = 15  # <= 0 disables early stopping
    loso_epochs: int = 60  # fixed budget when no validation fold exists
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if not (0 <= self.warmup_epochs < self.max_epochs):
            raise ContractError(
                f"warmup_epochs {self.warmup_epochs} must be < max_epochs "
                f"{self.max_epochs}"
            )
        for name in ("max_epochs", "batch_size", "loso_epochs"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.lr_peak < 0 or self.weight_decay < 0:
            raise ContractError("lr_peak and weight_decay must be non-negative")

    @classmethod
    def desk_scale(cls, **overrides) -> "TrainConfig":
        """CPU-scale defaults; the higher peak rate is a scaling choice for
        the small randomly-initialized desk model, not a tuned value."""
        base = cls(lr_peak=1e-3, warmup_epochs=5, max_epochs=40,
                   early_stop_patience=15)
        return replace(base, **overrides)


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Linear warmup to lr_peak, then cosine decay to zero at max_epochs.

    The first epoch runs at lr_peak/warmup_epochs (not zero); the junction
    epoch equals lr_peak exactly, so the schedule is continuous there.
    """
    if not 0 <= epoch < config.max_epochs:
        raise ContractError(
            f"epoch {epoch} outside schedule [0, {config.max_epochs})"
        )
    if config.warmup_epochs > 0 and epoch < config.warmup_epochs:
        return config.lr_peak * (epoch + 1) / config.warmup_epochs
    span = config.max_epochs - config.warmup_epochs
    progress = (epoch - config.warmup_epochs) / span
    return config.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamWState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: Mapping[str, Tensor]):
        self.step = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adamw_step(
    params: Mapping[str, Tensor],
    state: AdamWState,
    lr_t: float,
    weight_decay: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay Adam update; params with grad=None are
    treated as zero-gradient (decay still applies)."""
    if lr_t < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr_t}")
    b1, b2 = betas
    state.step += 1
    t = state.step
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        if g is not None and not np.isfinite(g).all():
            raise TrainingAbort(f"non-finite gradient in parameter {name!r}")
        if weight_decay != 0.0:
            p.data -= (lr_t * weight_decay) * p.data
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= (lr_t * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
