"""Closed-form reference quantities for labeled isotropic Gaussian mixtures.

Because the data distribution is an explicit mixture, the diffused marginal
at every step t is also an explicit mixture:

    p_t(x | k) = sum_j w_kj N(x; sqrt(abar_t) mu_kj, (abar_t var_kj + 1 - abar_t) I)

so the Bayes-optimal noise estimate (what a perfectly trained denoiser would
output) and the Bayes posterior over concepts are both available exactly.
They anchor every accuracy claim in the test suite.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule
from .validation import as_float_array, check_timestep

MIXTURE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class GaussianComponent:
    """One isotropic component: N(mean, var * I)."""

    weight: float
    mean: tuple[float, ...]
    var: float

    def __post_init__(self):
        if not 0.0 < float(self.weight) <= 1.0:
            raise ValueError(f"component weight must be in (0, 1], got {self.weight}")
        if float(self.var) <= 0.0:
            raise ValueError(f"component variance must be positive, got {self.var}")
        mean = tuple(float(m) for m in self.mean)
        if len(mean) == 0 or not all(np.isfinite(mean)):
            raise ValueError(f"component mean must be finite and non-empty, got {self.mean}")
        object.__setattr__(self, "weight", float(self.weight))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", float(self.var))


@dataclass(frozen=True)
class ConceptMixture:
    name: str
    prior: float
    components: tuple[GaussianComponent, ...]

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise ValueError("concept name must be a non-empty string")
        if not 0.0 < float(self.prior) <= 1.0:
            raise ValueError(f"concept prior must be in (0, 1], got {self.prior}")
        comps = tuple(
            c if isinstance(c, GaussianComponent) else GaussianComponent(**c)
            for c in self.components
        )
        if not comps:
            raise ValueError(f"concept {self.name!r} has no components")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"component weights of {self.name!r} sum to {total}, not 1")
        dims = {len(c.mean) for c in comps}
        if len(dims) != 1:
            raise ValueError(f"components of {self.name!r} disagree on dimension: {dims}")
        object.__setattr__(self, "prior", float(self.prior))
        object.__setattr__(self, "components", comps)


@dataclass(frozen=True)
class MixtureSpec:
    """Full labeled mixture: K concepts, each its own component list."""

    concepts: tuple[ConceptMixture, ...]

    def __post_init__(self):
        concepts = tuple(
            c if isinstance(c, ConceptMixture) else ConceptMixture(**c)
            for c in self.concepts
        )
        if not concepts:
            raise ValueError("mixture needs at least one concept")
        names = [c.name for c in concepts]
        if len(set(names)) != len(names):
            raise ValueError(f"concept names must be unique, got {names}")
        total = sum(c.prior for c in concepts)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"concept priors sum to {total}, not 1")
        dims = {len(c.components[0].mean) for c in concepts}
        if len(dims) != 1:
            raise ValueError(f"concepts disagree on dimension: {dims}")
        object.__setattr__(self, "concepts", concepts)

    @property
    def K(self) -> int:
        return len(self.concepts)

    @property
    def D(self) -> int:
        return len(self.concepts[0].components[0].mean)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.concepts)

    @property
    def priors(self) -> np.ndarray:
        return np.array([c.prior for c in self.concepts])

    def flatten(self, concept_ids=None):
        """Component-level view of the mixture conditioned on a concept set.

        concept_ids of None or () selects every concept weighted by its
        prior (the unconditional marginal); a tuple of 1-based ids selects
        that subset with renormalized priors. Returns (weights, means, vars).
        """
        if concept_ids is None:
            concept_ids = ()
        ids = tuple(int(i) for i in concept_ids)
        if len(ids) == 0:
            ids = tuple(range(1, self.K + 1))
        if len(set(ids)) != len(ids):
            raise ValueError(f"concept ids must be distinct, got {concept_ids}")
        for i in ids:
            if not 1 <= i <= self.K:
                raise ValueError(f"concept id {i} outside [1, {self.K}]")
        prior_total = sum(self.concepts[i - 1].prior for i in ids)
        weights, means, vars_ = [], [], []
        for i in ids:
            concept = self.concepts[i - 1]
            for comp in concept.components:
                weights.append(concept.prior / prior_total * comp.weight)
                means.append(comp.mean)
                vars_.append(comp.var)
        return np.array(weights), np.array(means), np.array(vars_)

    def moments(self, concept_ids=None):
        """Exact mean and covariance of the selected (sub)mixture at t=0."""
        w, mu, var = self.flatten(concept_ids)
        mean = w @ mu
        centered = mu - mean
        cov = np.eye(self.D) * np.sum(w * var)
        cov += (w[:, None] * centered).T @ centered
        return mean, cov

    def sample(self, n: int, rng, concept_ids=None):
        """Draw n labeled points. Returns (points (n, D), labels (n,))."""
        from .rng import as_generator

        gen = as_generator(rng)
        if concept_ids is None or len(tuple(concept_ids)) == 0:
            ids = tuple(range(1, self.K + 1))
        else:
            ids = tuple(int(i) for i in concept_ids)
        priors = np.array([self.concepts[i - 1].prior for i in ids])
        priors = priors / priors.sum()
        choice = gen.choice(len(ids), size=n, p=priors)
        labels = np.array([ids[c] for c in choice], dtype=np.int32)
        points = np.empty((n, self.D))
        for row, k in enumerate(labels):
            concept = self.concepts[k - 1]
            cw = np.array([c.weight for c in concept.components])
            j = gen.choice(len(cw), p=cw)
            comp = concept.components[j]
            points[row] = np.array(comp.mean) + np.sqrt(comp.var) * gen.standard_normal(self.D)
        return points, labels

    def to_json(self) -> str:
        payload = {
            "version": MIXTURE_FORMAT_VERSION,
            "concepts": [
                {
                    "name": c.name,
                    "prior": c.prior,
                    "components": [
                        {"weight": comp.weight, "mean": list(comp.mean), "var": comp.var}
                        for comp in c.components
                    ],
                }
                for c in self.concepts
            ],
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(text: str) -> "MixtureSpec":
        payload = json.loads(text)
        version = payload.get("version")
        if version != MIXTURE_FORMAT_VERSION:
            raise ValueError(f"unsupported mixture format version: {version!r}")
        concepts = tuple(
            ConceptMixture(
                name=c["name"],
                prior=c["prior"],
                components=tuple(GaussianComponent(**comp) for comp in c["components"]),
            )
            for c in payload["concepts"]
        )
        return MixtureSpec(concepts=concepts)

    def spec_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _log_normal_iso(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Log density of isotropic Gaussians, batched over components.

    x: (..., D), means: (J, D), variances: (J,). Returns (..., J).
    """
    d = x.shape[-1]
    diff = x[..., None, :] - means
    sq = np.sum(diff * diff, axis=-1)
    return -0.5 * (d * np.log(2.0 * np.pi * variances) + sq / variances)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def optimal_noise(
    mix: MixtureSpec, x_t, t: int, sched: NoiseSchedule, concept_ids=None
) -> np.ndarray:
    """Bayes-optimal noise estimate at step t, conditioned on concept_ids.

    eps*(x, t) = -sqrt(1 - abar_t) * grad log p_t(x), with p_t the diffused
    (sub)mixture. Responsibilities are computed in the log domain, so the
    result stays finite far into the tails (|x| ~ 1e6).
    """
    x_t = as_float_array(x_t, "x_t")
    if x_t.shape[-1] != mix.D:
        raise ValueError(f"x_t last dimension {x_t.shape[-1]} != mixture dimension {mix.D}")
    t = check_timestep(t, sched.T)
    abar = sched.alpha_bar(t)
    w, mu, var = mix.flatten(concept_ids)
    means_t = np.sqrt(abar) * mu
    vars_t = abar * var + (1.0 - abar)
    log_resp = _log_softmax(np.log(w) + _log_normal_iso(x_t, means_t, vars_t))
    resp = np.exp(log_resp)
    # grad log p_t = sum_j r_j (m_j - x) / s_j^2
    pull = (means_t - x_t[..., None, :]) / vars_t[:, None]
    score = np.sum(resp[..., None] * pull, axis=-2)
    return -np.sqrt(1.0 - abar) * score


def bayes_posterior(mix: MixtureSpec, x) -> np.ndarray:
    """Posterior over the K concepts at clean-data points x: (..., K)."""
    x = as_float_array(x, "x")
    if x.shape[-1] != mix.D:
        raise ValueError(f"x last dimension {x.shape[-1]} != mixture dimension {mix.D}")
    log_joint = np.empty(x.shape[:-1] + (mix.K,))
    for idx, concept in enumerate(mix.concepts):
        cw = np.array([c.weight for c in concept.components])
        cmu = np.array([c.mean for c in concept.components])
        cvar = np.array([c.var for c in concept.components])
        comp_log = np.log(cw) + _log_normal_iso(x, cmu, cvar)
        shifted = comp_log - np.max(comp_log, axis=-1, keepdims=True)
        log_lik = np.max(comp_log, axis=-1) + np.log(np.sum(np.exp(shifted), axis=-1))
        log_joint[..., idx] = np.log(concept.prior) + log_lik
    return np.exp(_log_softmax(log_joint))


def oracle_predictor(mix: MixtureSpec, sched: NoiseSchedule):
    """Adapter exposing the oracle through the predictor interface.

    The returned callable has signature predict(x, t, cond_ids) where
    cond_ids is a tuple of 1-based concept ids; () or (0,) means
    unconditional. This is the same interface trained models expose, so the
    oracle can stand in for a model anywhere.
    """

    def predict(x, t, cond_ids=()):
        ids = tuple(int(i) for i in cond_ids)
        if ids == (0,):
            ids = ()
        if any(i == 0 for i in ids):
            raise ValueError(f"empty token cannot be mixed with concepts: {cond_ids}")
        return optimal_noise(mix, x, t, sched, ids if ids else None)

    return predict
