"""Neighborhood augmentation on token batches.

``gna`` mixes each node's token block and label row with a partner from the
same batch; ``lna`` zeroes whole hop tokens; ``nraug`` gates the two, applied
in that order, behind a per-batch coin flip.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, ValidationError


@dataclass
class AugConfig:
    enabled: bool = False
    p_aug: float = 0.5
    tau: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    protect_hop0: bool = False

    def validate(self):
        if not 0.0 <= self.p_aug <= 1.0:
            raise ConfigError(f"aug.p_aug must lie in [0, 1], got {self.p_aug}")
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"aug.tau must lie in (0, 1), got {self.tau}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError("aug.alpha and aug.beta must be positive")
        return self


@dataclass
class Batch:
    """Token block ``(b, K+1, d')`` with probability label rows ``(b, c)``."""

    tokens: np.ndarray
    labels: np.ndarray
    node_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        b = self.tokens.shape[0]
        if b < 1 or self.labels.shape[0] != b:
            raise ValidationError(f"batch has {b} token rows and {self.labels.shape[0]} label rows")
        if self.node_ids is None:
            self.node_ids = np.arange(b)

    @property
    def size(self):
        return self.tokens.shape[0]

    @classmethod
    def from_hard(cls, tokens, labels, num_classes, node_ids=None):
        labels = np.asarray(labels)
        onehot = np.zeros((labels.shape[0], num_classes), dtype=tokens.dtype)
        onehot[np.arange(labels.shape[0]), labels] = 1.0
        return cls(tokens, onehot, node_ids)


def masked_hop_count(K, tau):
    """Number of hop tokens zeroed per node: ``max(1, floor((K+1) * tau))``."""
    # the epsilon keeps e.g. 100 * 0.29 from flooring to 28
    return max(1, math.floor((K + 1) * tau + 1e-9))


def gna(batch: Batch, lam, pairing) -> Batch:
    """Convex mix of each row with row ``pairing[i]`` using a single ``lam``."""
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"mixing weight must lie in [0, 1], got {lam}")
    pairing = np.asarray(pairing)
    if pairing.shape != (batch.size,):
        raise ValidationError(f"pairing must have length {batch.size}, got {pairing.shape}")
    dt = batch.tokens.dtype
    lam_t, rest_t = dt.type(lam), dt.type(1.0 - lam)
    tokens = lam_t * batch.tokens + rest_t * batch.tokens[pairing]
    labels = lam * batch.labels + (1.0 - lam) * batch.labels[pairing]
    return replace(batch, tokens=tokens.astype(dt, copy=False), labels=labels)


def lna(batch: Batch, tau, rng, protect_hop0=False) -> Batch:
    """Zero ``max(1, floor((K+1) tau))`` whole hop tokens per node, drawn independently."""
    b, t, _ = batch.tokens.shape
    first = 1 if protect_hop0 else 0
    count = masked_hop_count(t - 1, tau)
    if count > t - first:
        raise ValidationError(f"cannot mask {count} of {t - first} eligible hops")
    picks = np.argsort(rng.random((b, t - first)), axis=1)[:, :count] + first
    keep = np.ones((b, t), dtype=batch.tokens.dtype)
    keep[np.arange(b)[:, None], picks] = 0
    return replace(batch, tokens=batch.tokens * keep[:, :, None])


def nraug(batch: Batch, cfg: AugConfig, rng) -> Batch:
    """With probability ``p_aug``: one Beta(alpha, beta) weight, mix, then mask."""
    if rng.random() >= cfg.p_aug:
        return batch
    lam = float(rng.beta(cfg.alpha, cfg.beta))
    pairing = rng.permutation(batch.size)
    mixed = gna(batch, lam, pairing)
    return lna(mixed, cfg.tau, rng, cfg.protect_hop0)
