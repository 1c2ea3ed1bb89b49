"""Reverse-process integration over an evenly spaced timestep grid."""

from __future__ import annotations

import numpy as np

from .errors import DivergenceError
from .guidance import GuidanceConfig, guided_noise
from .rng import as_generator
from .schedule import NoiseSchedule, ddim_step, ddpm_step

SAMPLERS = ("ddim", "ddpm")


def timestep_grid(T: int, n_steps: int) -> np.ndarray:
    """Evenly spaced subsequence from T down to 0, inclusive on both ends.

    Spacing is T/n_steps >= 1, which makes the rounded grid strictly
    decreasing, so every entry appears once.
    """
    if not 1 <= int(n_steps) <= int(T):
        raise ValueError(f"n_steps must lie in [1, T={T}], got {n_steps}")
    grid = np.rint(np.linspace(T, 0, int(n_steps) + 1)).astype(int)
    return grid


def denoise(x, predict, guidance, sched, grid, rng=None, sampler: str = "ddim"):
    """Integrate the reverse process along a strictly decreasing timestep grid."""
    grid = np.asarray(grid, dtype=int)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) >= 0):
        raise ValueError("grid must be a strictly decreasing timestep sequence")
    gen = as_generator(rng) if rng is not None else None
    for i in range(len(grid) - 1):
        t = int(grid[i])
        eps = guided_noise(predict, x, t, guidance)
        if not np.all(np.isfinite(eps)):
            raise DivergenceError(f"noise estimate became non-finite at t={t}")
        if sampler == "ddim":
            x = ddim_step(x, eps, t, int(grid[i + 1]), sched)
        else:
            x = ddpm_step(x, eps, t, sched, gen)
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"sample became non-finite at t={int(grid[-1])}")
    return x


def _check_sampler(sampler: str, n_steps: int, T: int):
    if sampler not in SAMPLERS:
        raise ValueError(f"unknown sampler {sampler!r}")
    if sampler == "ddpm" and int(n_steps) != int(T):
        # the ancestral kernel is defined for single steps only
        raise ValueError(f"ddpm sampling requires n_steps == T ({T}), got {n_steps}")


def sample_trajectory(
    predict,
    guidance: GuidanceConfig,
    sched: NoiseSchedule,
    n_steps: int,
    dim: int,
    rng,
    sampler: str = "ddim",
) -> np.ndarray:
    """Draw x_T ~ N(0, I) and integrate the reverse process to x_0."""
    _check_sampler(sampler, n_steps, sched.T)
    gen = as_generator(rng)
    grid = timestep_grid(sched.T, n_steps)
    x = gen.standard_normal(int(dim))
    return denoise(x, predict, guidance, sched, grid, gen, sampler)


def sample_batch(
    predict,
    guidance: GuidanceConfig,
    sched: NoiseSchedule,
    n_steps: int,
    n: int,
    dim: int,
    rng,
    sampler: str = "ddim",
) -> np.ndarray:
    """Vectorized batch of n reverse-process samples, shape (n, dim)."""
    if int(n) < 1:
        raise ValueError(f"n must be positive, got {n}")
    _check_sampler(sampler, n_steps, sched.T)
    gen = as_generator(rng)
    grid = timestep_grid(sched.T, n_steps)
    x = gen.standard_normal((int(n), int(dim)))
    return denoise(x, predict, guidance, sched, grid, gen, sampler)
