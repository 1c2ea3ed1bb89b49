"""AdamW with decoupled weight decay plus step-size schedules.

The optimizer mutates a tensor dict in place and keeps first/second moment
state per parameter key. Restricting an update to a parameter group is done
by passing only that group's keys; untouched keys accumulate no moment
state and never feel weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-2
    eps: float = 1e-8
    schedule: str = "constant"
    warmup: int = 0

    def __post_init__(self):
        if not np.isfinite(self.lr) or self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        b1, b2 = self.betas
        if not (0.0 <= b1 < 1.0 and 0.0 <= b2 < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.warmup < 0:
            raise ValueError(f"warmup must be >= 0, got {self.warmup}")


def lr_at(cfg: OptimConfig, step: int, total: int) -> float:
    """Step size for 0-based step index out of total optimizer steps."""
    if not 0 <= step < total:
        raise ValueError(f"step {step} outside [0, {total})")
    if cfg.schedule == "constant":
        return cfg.lr
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    span = max(total - cfg.warmup, 1)
    progress = (step - cfg.warmup) / span
    return cfg.lr * 0.5 * (1.0 + np.cos(np.pi * progress))


class AdamW:
    """Decoupled-weight-decay Adam over a named tensor dict."""

    def __init__(self, cfg: OptimConfig):
        self.cfg = cfg
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict, grad: dict, lr: float, keys=None) -> None:
        b1, b2 = self.cfg.betas
        wd = self.cfg.weight_decay
        self.t += 1
        bias1 = 1.0 - b1**self.t
        bias2 = 1.0 - b2**self.t
        for key in tensors if keys is None else keys:
            g = grad[key]
            if key not in self.m:
                self.m[key] = np.zeros_like(g)
                self.v[key] = np.zeros_like(g)
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            w = tensors[key]
            w -= lr * wd * w
            w -= lr * (m / bias1) / (np.sqrt(v / bias2) + self.cfg.eps)
