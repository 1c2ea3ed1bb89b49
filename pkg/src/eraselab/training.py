"""Denoiser pretraining on labeled mixture samples.

Standard epsilon matching: draw (x0, label), noise to a uniform random
timestep, and regress the injected noise conditioned on the label's token.
A fraction p_drop of rows trains against the empty token instead, which is
what gives the model a usable unconditional estimate for guidance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LabeledDataset
from .errors import DivergenceError
from .network import (
    ArchitectureConfig,
    ConceptVocabulary,
    ModelParams,
    backward,
    embed_concepts,
    forward,
    init_params,
)
from .optim import AdamW, OptimConfig, lr_at
from .rng import as_generator
from .schedule import NoiseSchedule, q_sample


@dataclass(frozen=True)
class TrainConfig:
    n_steps: int = 20_000
    batch_size: int = 128
    p_drop: float = 0.1

    def __post_init__(self):
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.p_drop < 1.0:
            raise ValueError(f"p_drop must lie in [0, 1), got {self.p_drop}")


@dataclass
class TrainResult:
    params: ModelParams
    losses: np.ndarray


def batch_loss_and_grad(params, vocab, x_t, t, token_ids, target, sched):
    """Mean-squared noise error over the batch plus its parameter gradient.

    token_ids gives one concept id per row (0 for the empty token); rows are
    grouped by id so each group runs the shared-sequence forward pass.
    """
    n, d = target.shape
    grads = None
    loss = 0.0
    for tok in np.unique(token_ids):
        rows = np.flatnonzero(token_ids == tok)
        seq = embed_concepts(vocab, (int(tok),))
        eps_hat, cache = forward(params, vocab, x_t[rows], t[rows], seq, sched)
        res = eps_hat - target[rows]
        loss += float((res * res).sum())
        g = backward(params, cache, 2.0 * res / (n * d))
        if grads is None:
            grads = g
        else:
            for key in grads:
                grads[key] += g[key]
    return loss / (n * d), grads


def train_base(
    data: LabeledDataset,
    vocab: ConceptVocabulary,
    arch: ArchitectureConfig,
    sched: NoiseSchedule,
    optim: OptimConfig,
    rng,
    train: TrainConfig = TrainConfig(),
) -> TrainResult:
    """Fit the conditional denoiser to the dataset's mixture by noise matching."""
    if vocab.K != data.mixture.K:
        raise ValueError(
            f"vocabulary has {vocab.K} concepts but data mixture has {data.mixture.K}"
        )
    gen = as_generator(rng)
    params = init_params(arch, gen)
    opt = AdamW(optim)
    losses = np.empty(train.n_steps)
    points = data.points
    labels = data.labels
    for step in range(train.n_steps):
        idx = gen.integers(0, data.n, train.batch_size)
        x0 = points[idx]
        t = gen.integers(1, sched.T + 1, train.batch_size)
        eps = gen.standard_normal((train.batch_size, arch.D))
        x_t = q_sample(x0, t, eps, sched)
        token_ids = labels[idx].astype(np.int64)
        if train.p_drop > 0.0:
            token_ids[gen.random(train.batch_size) < train.p_drop] = 0
        loss, grads = batch_loss_and_grad(params, vocab, x_t, t, token_ids, eps, sched)
        if not np.isfinite(loss):
            raise DivergenceError(f"training loss became non-finite at step {step}")
        losses[step] = loss
        opt.step(params.tensors, grads, lr_at(optim, step, train.n_steps))
    return TrainResult(params=ModelParams(arch, params.tensors), losses=losses)
