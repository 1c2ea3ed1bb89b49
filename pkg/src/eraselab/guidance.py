"""Inference-time guidance algebra.

All operations combine noise estimates elementwise and are pure. Notation:
eps_u is the unconditional estimate, eps_cp the estimate for the user's
prompt, eps_cs the estimate for the safety/erasure target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_float_array

GUIDANCE_METHODS = ("none", "cfg", "neg_prompt", "sld", "sega")


def cfg_combine(eps_u, eps_c, s: float) -> np.ndarray:
    """Classifier-free guidance: eps_u + s * (eps_c - eps_u)."""
    eps_u = as_float_array(eps_u, "eps_u")
    eps_c = as_float_array(eps_c, "eps_c")
    if eps_u.shape != eps_c.shape:
        raise ValueError(f"shape mismatch: {eps_u.shape} vs {eps_c.shape}")
    return eps_u + float(s) * (eps_c - eps_u)


def neg_prompt_guidance(eps_cs, eps_cp, s: float) -> np.ndarray:
    """CFG with the erased concept's estimate in the unconditional slot."""
    return cfg_combine(eps_cs, eps_cp, s)


def sld_mu(d, lam: float) -> np.ndarray:
    """Elementwise safety scale for a guidance direction d.

    mu_i = max(1, |d_i|) where |d_i| < lam and 0 elsewhere, so coordinates
    where the direction is already strong are left untouched.
    """
    d = as_float_array(d, "d")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    mag = np.abs(d)
    return np.where(mag < float(lam), np.maximum(1.0, mag), 0.0)


def sld_guidance(eps_u, eps_cp, eps_cs, s_g: float, s_s: float, lam: float) -> np.ndarray:
    """Safe-latent guidance: CFG minus mu-scaled pull toward the target."""
    eps_u = as_float_array(eps_u, "eps_u")
    eps_cp = as_float_array(eps_cp, "eps_cp")
    eps_cs = as_float_array(eps_cs, "eps_cs")
    if not (eps_u.shape == eps_cp.shape == eps_cs.shape):
        raise ValueError("eps_u, eps_cp, eps_cs must share a shape")
    mu = sld_mu(float(s_s) * (eps_cs - eps_cp), lam)
    return cfg_combine(eps_u, eps_cp, s_g) - mu * (eps_cs - eps_u)


def sega_eta(v, lam: float) -> float:
    """Smallest of the ceil(lam/100 * n) largest elements of a 1-D vector."""
    v = as_float_array(v, "v", ndim=1)
    n = v.shape[0]
    if n == 0:
        raise ValueError("v must be non-empty")
    if not 0.0 < lam <= 100.0:
        raise ValueError(f"lam must be a percentage in (0, 100], got {lam}")
    k = math.ceil(lam / 100.0 * n)
    return float(np.partition(v, n - k)[n - k])


def sega_guidance(eps_u, eps_cp, eps_cs, s_g: float, s_s: float, lam: float) -> np.ndarray:
    """Semantic guidance: CFG minus the top-lam-percentile coordinates of the
    target direction. The percentile mask is computed per sample (last axis).
    """
    eps_u = as_float_array(eps_u, "eps_u")
    eps_cp = as_float_array(eps_cp, "eps_cp")
    eps_cs = as_float_array(eps_cs, "eps_cs")
    if not (eps_u.shape == eps_cp.shape == eps_cs.shape):
        raise ValueError("eps_u, eps_cp, eps_cs must share a shape")
    if not 0.0 < lam <= 100.0:
        raise ValueError(f"lam must be a percentage in (0, 100], got {lam}")
    mag = np.abs(float(s_s) * (eps_cs - eps_u))
    n = mag.shape[-1]
    k = math.ceil(lam / 100.0 * n)
    eta = np.partition(mag, n - k, axis=-1)[..., n - k, None]
    mask = (mag >= eta).astype(float)
    return cfg_combine(eps_u, eps_cp, s_g) - mask * (eps_cs - eps_u)


@dataclass(frozen=True)
class GuidanceConfig:
    """How to turn predictor calls into the guided noise estimate.

    prompt_ids condition the generation (empty tuple = unconditional);
    target_ids name the concept(s) a defense steers away from and are
    required by neg_prompt, sld and sega.
    """

    method: str = "cfg"
    s_g: float = 7.5
    s_s: float = 1.0
    sld_lambda: float = 1.0
    sega_lambda: float = 10.0
    prompt_ids: tuple[int, ...] = ()
    target_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.method not in GUIDANCE_METHODS:
            raise ValueError(f"unknown guidance method {self.method!r}")
        for name in ("s_g", "s_s", "sld_lambda", "sega_lambda"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.sld_lambda < 0:
            raise ValueError(f"sld_lambda must be non-negative, got {self.sld_lambda}")
        if not 0.0 < self.sega_lambda <= 100.0:
            raise ValueError(f"sega_lambda must be in (0, 100], got {self.sega_lambda}")
        for field_name in ("prompt_ids", "target_ids"):
            ids = tuple(int(i) for i in getattr(self, field_name))
            if any(i < 1 for i in ids):
                raise ValueError(f"{field_name} must be 1-based concept ids, got {ids}")
            object.__setattr__(self, field_name, ids)
        if self.method in ("neg_prompt", "sld", "sega") and not self.target_ids:
            raise ValueError(f"method {self.method!r} requires target_ids")


def guided_noise(predict, x, t: int, cfg: GuidanceConfig) -> np.ndarray:
    """Evaluate the predictor under the configured guidance method."""
    if cfg.method == "none":
        return predict(x, t, cfg.prompt_ids)
    eps_u = predict(x, t, ())
    eps_cp = eps_u if cfg.prompt_ids == () else predict(x, t, cfg.prompt_ids)
    if cfg.method == "cfg":
        return cfg_combine(eps_u, eps_cp, cfg.s_g)
    eps_cs = predict(x, t, cfg.target_ids)
    if cfg.method == "neg_prompt":
        return neg_prompt_guidance(eps_cs, eps_cp, cfg.s_g)
    if cfg.method == "sld":
        return sld_guidance(eps_u, eps_cp, eps_cs, cfg.s_g, cfg.s_s, cfg.sld_lambda)
    return sega_guidance(eps_u, eps_cp, eps_cs, cfg.s_g, cfg.s_s, cfg.sega_lambda)
