"""Discrete-time noise schedule and the two elementary reverse-step rules.

Timesteps are 1-based: ``betas[t-1]`` is the step-t mixing rate and
``alpha_bars[t-1]`` the cumulative signal fraction after t forward steps.
``alpha_bar(0)`` is defined as 1 so the deterministic sampler can land on
clean data. All functions are pure and thread-safe; the only stateful
object is the generator passed to :func:`ddpm_step`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .rng import as_generator
from .validation import as_float_array, check_timestep

# A schedule that keeps >= 5% of the signal at t=T cannot be sampled from
# pure noise; between 1% and 5% it still works but poorly, so only warn.
ALPHA_BAR_FAIL = 0.05
ALPHA_BAR_WARN = 0.01

# Reference endpoints at T=1000; shorter schedules scale them by 1000/T so
# the total amount of injected noise stays comparable.
BETA_MIN_REF = 1e-4
BETA_MAX_REF = 0.02
T_REF = 1000.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule with precomputed alphas and cumulative products."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.T, (int, np.integer)) or isinstance(self.T, bool):
            raise ValueError(f"T must be an integer, got {self.T!r}")
        T = int(self.T)
        if T < 2:
            raise ValueError(f"T must be >= 2, got {T}")
        betas = as_float_array(self.betas, "betas", ndim=1)
        if betas.shape != (T,):
            raise ValueError(f"betas must have shape ({T},), got {betas.shape}")
        if not np.all((betas > 0.0) & (betas < 1.0)):
            raise ValueError("betas must lie strictly inside (0, 1)")
        alphas = 1.0 - betas
        # cumprod is the sequential product, which the invariant
        # alpha_bars[t] == alpha_bars[t-1] * alphas[t] relies on.
        alpha_bars = np.cumprod(alphas)
        abar_T = float(alpha_bars[-1])
        if abar_T >= ALPHA_BAR_FAIL:
            raise ValueError(
                f"alpha_bar at t=T is {abar_T:.4f}; schedules must end below "
                f"{ALPHA_BAR_FAIL} to start sampling from pure noise"
            )
        if abar_T >= ALPHA_BAR_WARN:
            warnings.warn(
                f"alpha_bar at t=T is {abar_T:.4f}, above the recommended "
                f"{ALPHA_BAR_WARN}; sampling from pure noise will be biased",
                stacklevel=2,
            )
        for name, arr in (("betas", betas), ("alphas", alphas), ("alpha_bars", alpha_bars)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "T", T)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction after t steps; alpha_bar(0) == 1."""
        t = check_timestep(t, self.T, low=0)
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def build_schedule(
    T: int, beta_min: float | None = None, beta_max: float | None = None
) -> NoiseSchedule:
    """Linear-beta schedule; unset endpoints follow the 1000/T scaling rule.

    With T=100 the defaults come out to (1e-3, 0.2), keeping the terminal
    alpha_bar around 4e-5 regardless of how coarse the discretization is.
    """
    if not isinstance(T, (int, np.integer)) or isinstance(T, bool) or int(T) < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    T = int(T)
    if beta_min is None:
        beta_min = BETA_MIN_REF * (T_REF / T)
    if beta_max is None:
        beta_max = BETA_MAX_REF * (T_REF / T)
    beta_min = float(beta_min)
    beta_max = float(beta_max)
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError(
            f"need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )
    return NoiseSchedule(T=T, betas=np.linspace(beta_min, beta_max, T))


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Diffuse clean points to step t: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` may be a scalar or a per-row integer array matching x0's leading
    dimension, which is how training draws per-sample timesteps.
    """
    x0 = as_float_array(x0, "x0")
    eps = as_float_array(eps, "eps")
    if x0.shape != eps.shape:
        raise ValueError(f"x0 and eps shapes differ: {x0.shape} vs {eps.shape}")
    t_arr = np.asarray(t)
    if t_arr.ndim == 0:
        abar = sched.alpha_bar(t if isinstance(t, (int, np.integer)) else int(t_arr))
    else:
        if np.any((t_arr < 1) | (t_arr > sched.T)):
            raise ValueError(f"timesteps outside [1, {sched.T}]")
        abar = sched.alpha_bars[t_arr - 1]
        abar = abar.reshape(abar.shape + (1,) * (x0.ndim - t_arr.ndim))
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * eps


def ddim_step(x_t, eps_hat, t: int, t_prev: int, sched: NoiseSchedule) -> np.ndarray:
    """One deterministic (eta=0) update from step t down to t_prev.

    Reconstructs x0_hat = (x_t - sqrt(1-abar_t) eps_hat) / sqrt(abar_t) and
    re-noises it to t_prev with the same noise estimate. t_prev may be 0.
    """
    x_t = as_float_array(x_t, "x_t")
    eps_hat = as_float_array(eps_hat, "eps_hat")
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"x_t and eps_hat shapes differ: {x_t.shape} vs {eps_hat.shape}")
    t = check_timestep(t, sched.T)
    t_prev = check_timestep(t_prev, sched.T, low=0)
    if t_prev >= t:
        raise ValueError(f"t_prev must be below t, got t={t}, t_prev={t_prev}")
    abar_t = sched.alpha_bar(t)
    abar_p = sched.alpha_bar(t_prev)
    x0_hat = (x_t - np.sqrt(1.0 - abar_t) * eps_hat) / np.sqrt(abar_t)
    return np.sqrt(abar_p) * x0_hat + np.sqrt(1.0 - abar_p) * eps_hat


def ddpm_step(x_t, eps_hat, t: int, sched: NoiseSchedule, rng) -> np.ndarray:
    """One ancestral step from t to t-1; the noise draw is skipped at t == 1."""
    x_t = as_float_array(x_t, "x_t")
    eps_hat = as_float_array(eps_hat, "eps_hat")
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"x_t and eps_hat shapes differ: {x_t.shape} vs {eps_hat.shape}")
    t = check_timestep(t, sched.T)
    beta = sched.betas[t - 1]
    alpha = sched.alphas[t - 1]
    abar = sched.alpha_bars[t - 1]
    mean = (x_t - beta / np.sqrt(1.0 - abar) * eps_hat) / np.sqrt(alpha)
    if t == 1:
        return mean
    gen = as_generator(rng)
    return mean + np.sqrt(beta) * gen.standard_normal(x_t.shape)
