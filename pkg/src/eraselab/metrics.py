"""Quantitative evaluation of erasure runs.

Four sample-based metrics mirror the usual image-domain suite: a posterior
classifier rate (how often concept samples still look like the concept), a
moment-matching Fréchet distance between sample sets, a same-seed paired
divergence between two models, and a conditioning-alignment score. The
interference matrix combines them across concepts to separate "erased the
target" from "damaged everything else".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guidance import GuidanceConfig
from .oracle import ConceptMixture, bayes_posterior
from .rng import RngStream
from .sampling import sample_batch, sample_trajectory
from .schedule import NoiseSchedule
from .validation import as_float_array

EIGEN_CLAMP = -1e-8


@dataclass(frozen=True)
class PrototypeScorer:
    """Two-prototype soft classifier over raw coordinates.

    Gaussian kernels replace cosine similarity so the score is well defined
    near the origin; the ratio form s_minus / (s_plus + s_minus) is kept.
    """

    c_plus: np.ndarray
    c_minus: np.ndarray
    tau: float = 1.0
    threshold: float = 0.7

    def __post_init__(self):
        cp = as_float_array(self.c_plus, "c_plus", ndim=1)
        cm = as_float_array(self.c_minus, "c_minus", ndim=1)
        if cp.shape != cm.shape:
            raise ValueError("prototypes must share a dimension")
        if np.array_equal(cp, cm):
            raise ValueError("prototypes must be distinct")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        object.__setattr__(self, "c_plus", cp)
        object.__setattr__(self, "c_minus", cm)


def prototype_score(scorer: PrototypeScorer, x) -> np.ndarray | float:
    """Soft probability that x belongs to the c_minus prototype."""
    x = as_float_array(x, "x")
    d_plus = ((x - scorer.c_plus) ** 2).sum(axis=-1)
    d_minus = ((x - scorer.c_minus) ** 2).sum(axis=-1)
    # shift by the smaller distance so both kernels stay representable
    shift = np.minimum(d_plus, d_minus)
    s_plus = np.exp(-(d_plus - shift) / (2 * scorer.tau**2))
    s_minus = np.exp(-(d_minus - shift) / (2 * scorer.tau**2))
    score = s_minus / (s_plus + s_minus)
    return float(score) if score.ndim == 0 else score


def erased_fraction(samples, mix: ConceptMixture, k: int, threshold: float = 0.7) -> float:
    """Share of samples the Bayes classifier still assigns to concept k."""
    samples = as_float_array(samples, "samples", ndim=2)
    if samples.shape[0] == 0:
        raise ValueError("samples must be nonempty")
    if not 1 <= int(k) <= mix.K:
        raise ValueError(f"concept id {k} outside [1, {mix.K}]")
    post = bayes_posterior(mix, samples)[:, int(k) - 1]
    return float((post >= threshold).mean())


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() < EIGEN_CLAMP:
        raise ValueError(f"matrix is not PSD within tolerance: min eigenvalue {vals.min()}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(a, b) -> float:
    """Fréchet distance between Gaussians fitted to two sample sets."""
    a = as_float_array(a, "a", ndim=2)
    b = as_float_array(b, "b", ndim=2)
    d = a.shape[1]
    if b.shape[1] != d:
        raise ValueError("sample sets must share a dimension")
    if a.shape[0] < d + 1 or b.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} samples per set in dimension {d}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(d, d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d)
    root_a = _sqrt_psd(cov_a)
    cross = _sqrt_psd(root_a @ cov_b @ root_a)
    val = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a + cov_b - 2 * cross))
    return max(val, 0.0)


@dataclass(frozen=True)
class SamplerSettings:
    n_steps: int = 25
    sampler: str = "ddim"


def paired_divergence(
    predict_a,
    predict_b,
    guidance_a: GuidanceConfig,
    guidance_b: GuidanceConfig,
    seeds,
    sched: NoiseSchedule,
    settings_a: SamplerSettings = SamplerSettings(),
    settings_b: SamplerSettings | None = None,
    dim: int = 2,
) -> float:
    """Mean distance between same-seed samples of two models.

    Each seed drives one reverse-process trajectory per model from an
    identical stream, so any difference is attributable to the models (or
    their guidance), not to sampling noise.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("seeds must be nonempty")
    if settings_b is None:
        settings_b = settings_a
    if settings_b != settings_a:
        raise ValueError(
            f"sampler settings must be identical, got {settings_a} vs {settings_b}"
        )
    total = 0.0
    for seed in seeds:
        xa = sample_trajectory(
            predict_a, guidance_a, sched, settings_a.n_steps, dim,
            RngStream(int(seed), 0), settings_a.sampler,
        )
        xb = sample_trajectory(
            predict_b, guidance_b, sched, settings_a.n_steps, dim,
            RngStream(int(seed), 0), settings_a.sampler,
        )
        total += float(np.linalg.norm(xa - xb))
    return total / len(seeds)


def alignment_score(samples, concept_ids, mix: ConceptMixture) -> float:
    """Mean log posterior of each sample's own prompt concept."""
    samples = as_float_array(samples, "samples", ndim=2)
    ids = np.asarray(concept_ids, dtype=int)
    if samples.shape[0] == 0:
        raise ValueError("samples must be nonempty")
    if ids.shape != (samples.shape[0],):
        raise ValueError("need one concept id per sample")
    if ids.min() < 1 or ids.max() > mix.K:
        raise ValueError(f"concept ids must lie in [1, {mix.K}]")
    post = bayes_posterior(mix, samples)[np.arange(len(ids)), ids - 1]
    return float(np.log(np.clip(post, 1e-300, None)).mean())


def interference_matrix(
    base_predict,
    erased_predicts: dict,
    mix: ConceptMixture,
    sched: NoiseSchedule,
    n: int,
    rng: RngStream,
    settings: SamplerSettings = SamplerSettings(),
    dim: int = 2,
) -> np.ndarray:
    """K x K Fréchet distances: erased-on-k samples vs base, conditioned on j.

    Sampling reuses one stream per conditioning concept across models, so
    each (k, j) comparison is same-seed.
    """
    if int(n) < dim + 1:
        raise ValueError(f"need at least {dim + 1} samples, got {n}")
    missing = [k for k in range(1, mix.K + 1) if k not in erased_predicts]
    if missing:
        raise ValueError(f"missing erased models for concepts {missing}")

    def draws(predict, j):
        guidance = GuidanceConfig(method="none", prompt_ids=(j,))
        return sample_batch(
            predict, guidance, sched, settings.n_steps, int(n), dim,
            rng.with_stream(rng.stream + j), settings.sampler,
        )

    base_samples = {j: draws(base_predict, j) for j in range(1, mix.K + 1)}
    out = np.zeros((mix.K, mix.K))
    for k in range(1, mix.K + 1):
        for j in range(1, mix.K + 1):
            out[k - 1, j - 1] = frechet_distance(
                draws(erased_predicts[k], j), base_samples[j]
            )
    return out


@dataclass
class EvalReport:
    """Bundle of evaluation outputs for one model/config."""

    method: str
    seeds: tuple[int, ...]
    n_samples: int
    erased_fractions: dict
    frechet_to_reference: dict
    frechet_to_uncond: dict
    alignment: float | None = None
    paired_div: float | None = None
    interference: np.ndarray | None = None

    def __post_init__(self):
        for k, v in self.erased_fractions.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"erased fraction for {k} outside [0, 1]: {v}")
        for table in (self.frechet_to_reference, self.frechet_to_uncond):
            for k, v in table.items():
                if v < 0:
                    raise ValueError(f"negative distance for {k}: {v}")
        if self.interference is not None and np.any(self.interference < 0):
            raise ValueError("interference entries must be nonnegative")
