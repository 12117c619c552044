"""Exploration/exploitation blend used as the coverage density."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TradeOffConfig:
    alpha: float = 0.1  # 1/s

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def weight(t: float, cfg: TradeOffConfig) -> float:
    """Exploitation weight ``tanh(alpha * t)`` for world time ``t`` in seconds."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return float(np.tanh(cfg.alpha * t))


def substitute_density(mean, std, W: float):
    """``exp(beta) - 1`` with ``beta = max(0, std + W * mean)``.

    Works elementwise on arrays. Negative posterior means can push ``beta``
    below zero; those points get zero density.
    """
    beta = np.maximum(0.0, np.asarray(std, dtype=float) + W * np.asarray(mean, dtype=float))
    out = np.expm1(beta)
    return float(out) if out.ndim == 0 else out
