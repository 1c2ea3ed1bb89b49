"""Scikit-learn style facade over the functional core.

Two thin wrappers so the lab plugs into sklearn tooling (clone,
get_params/set_params, pipelines built around fit/sample):

* DiffusionDenoiser: fit(X, y) on labeled 2-D points, sample() with
  classifier-free guidance.
* ConceptEraser: fit(denoiser) runs one erasure method against a fitted
  DiffusionDenoiser and exposes the resulting student/teacher models.

All math lives in the functional modules; these classes only marshal
arguments and hold results.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .erasure import EraseConfig, esd_finetune, sdd_finetune
from .guidance import GuidanceConfig
from .network import ArchitectureConfig, make_vocab, model_predictor
from .optim import OptimConfig
from .oracle import ConceptMixture, GaussianComponent, MixtureSpec
from .rng import RngStream, as_generator
from .sampling import denoise, timestep_grid
from .schedule import build_schedule
from .training import TrainConfig, train_base
from .data import LabeledDataset


def _require_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(
            f"{type(est).__name__} is not fitted yet; call fit() first"
        )


def empirical_mixture(X, y, names=None) -> MixtureSpec:
    """One spherical Gaussian per label, weighted by label frequency."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    K = int(y.max())
    concepts = []
    for k in range(1, K + 1):
        pts = X[y == k]
        if len(pts) == 0:
            raise ValueError(f"label {k} has no samples")
        var = float(max(pts.var(axis=0).mean(), 1e-12))
        name = names[k - 1] if names is not None else f"concept-{k}"
        concepts.append(ConceptMixture(
            name=name,
            prior=len(pts) / len(X),
            components=(GaussianComponent(weight=1.0, var=var,
                                          mean=tuple(pts.mean(axis=0))),),
        ))
    return MixtureSpec(concepts=tuple(concepts))


class DiffusionDenoiser(BaseEstimator):
    """Conditional denoiser with a fit/sample interface.

    fit(X, y) expects points X of shape (n, D) and integer labels y in
    1..K. Label 0 is reserved for the unconditional token and must not
    appear in y.
    """

    def __init__(self, *, n_steps: int = 20_000, batch_size: int = 128,
                 p_drop: float = 0.1, lr: float = 1e-3, T: int = 100,
                 hidden: int = 128, n_hidden: int = 3, d_e: int = 16,
                 d_t: int = 32, random_state: int = 0):
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.p_drop = p_drop
        self.lr = lr
        self.T = T
        self.hidden = hidden
        self.n_hidden = n_hidden
        self.d_e = d_e
        self.d_t = d_t
        self.random_state = random_state

    def fit(self, X, y, mixture: MixtureSpec | None = None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise ValueError("y must be one label per row of X")
        if y.min() < 1:
            raise ValueError("labels must be >= 1 (0 is the empty token)")
        mix = mixture if mixture is not None else empirical_mixture(X, y)
        data = LabeledDataset(points=X, labels=y, mixture=mix,
                              seed=self.random_state)
        arch = ArchitectureConfig(D=X.shape[1], H=self.hidden,
                                  n_hidden=self.n_hidden,
                                  d_e=self.d_e, d_t=self.d_t)
        sched = build_schedule(self.T)
        vocab = make_vocab(mix.names, self.d_e, RngStream(self.random_state, 1))
        result = train_base(
            data, vocab, arch, sched,
            OptimConfig(lr=self.lr),
            RngStream(self.random_state, 2),
            train=TrainConfig(n_steps=self.n_steps,
                              batch_size=self.batch_size,
                              p_drop=self.p_drop),
        )
        self.params_ = result.params
        self.losses_ = result.losses
        self.vocab_ = vocab
        self.schedule_ = sched
        self.mixture_ = mix
        self.n_features_in_ = X.shape[1]
        return self

    def predictor(self):
        """predict(x, t, cond_ids) closure over the fitted parameters."""
        _require_fitted(self, "params_")
        return model_predictor(self.params_, self.vocab_, self.schedule_)

    def sample(self, n: int, concept_ids=(), s_g: float = 7.5,
               n_steps: int = 25, random_state=None) -> np.ndarray:
        _require_fitted(self, "params_")
        seed = self.random_state if random_state is None else random_state
        gen = as_generator(RngStream(seed, 4))
        z = gen.standard_normal((int(n), self.n_features_in_))
        guidance = GuidanceConfig(method="cfg", s_g=s_g,
                                  prompt_ids=tuple(concept_ids))
        grid = timestep_grid(self.schedule_.T, n_steps)
        return denoise(z, self.predictor(), guidance, self.schedule_, grid)

    def score(self, X, y) -> float:
        """Negative noise-matching loss on (X, y); greater is better.

        Deterministic: row i is noised at timestep 1 + (i mod T) with
        noise drawn from a stream fixed by random_state.
        """
        from .schedule import q_sample
        from .training import batch_loss_and_grad

        _require_fitted(self, "params_")
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        gen = as_generator(RngStream(self.random_state, 9))
        t = 1 + np.arange(len(X)) % self.schedule_.T
        eps = gen.standard_normal(X.shape)
        x_t = q_sample(X, t, eps, self.schedule_)
        loss, _ = batch_loss_and_grad(self.params_, self.vocab_, x_t, t, y,
                                      eps, self.schedule_)
        return -float(loss)


class ConceptEraser(BaseEstimator):
    """Runs one erasure method against a fitted DiffusionDenoiser.

    After fit: student_ and (for sdd) teacher_ hold the fine-tuned
    parameters, history_ the per-iteration trace. erased_params_ is the
    model the method proposes for deployment: the EMA teacher for sdd,
    the student otherwise.
    """

    def __init__(self, *, method: str = "sdd", target_ids=(1,),
                 n_iters: int | None = None, lr: float | None = None,
                 s_g: float = 3.0, s_s: float = 3.0,
                 ema_momentum: float = 0.999, sampler_steps: int = 100,
                 eval_every: int = 100, eval_n: int = 1024,
                 random_state: int = 0):
        self.method = method
        self.target_ids = target_ids
        self.n_iters = n_iters
        self.lr = lr
        self.s_g = s_g
        self.s_s = s_s
        self.ema_momentum = ema_momentum
        self.sampler_steps = sampler_steps
        self.eval_every = eval_every
        self.eval_n = eval_n
        self.random_state = random_state

    def _config(self) -> EraseConfig:
        optim = None if self.lr is None else OptimConfig(
            lr=self.lr, schedule="cosine",
            warmup=(self.n_iters or 0) // 3)
        return EraseConfig(
            method=self.method,
            target_ids=tuple(self.target_ids),
            n_iters=self.n_iters,
            s_g=self.s_g,
            s_s=self.s_s,
            ema_momentum=self.ema_momentum,
            sampler_steps=self.sampler_steps,
            eval_every=self.eval_every,
            eval_n=self.eval_n,
            optim=optim,
        )

    def fit(self, denoiser: DiffusionDenoiser, mixture: MixtureSpec | None = None):
        _require_fitted(denoiser, "params_")
        cfg = self._config()
        mix = mixture if mixture is not None else denoiser.mixture_
        rng = RngStream(self.random_state, 3)
        if cfg.method == "sdd":
            student, teacher, hist = sdd_finetune(
                denoiser.params_, cfg, denoiser.vocab_, denoiser.schedule_,
                rng, mix=mix)
        else:
            teacher = None
            student, hist = esd_finetune(
                denoiser.params_, cfg, denoiser.vocab_, denoiser.schedule_,
                rng, mix=mix)
        self.student_ = student
        self.teacher_ = teacher
        self.history_ = hist
        self.vocab_ = denoiser.vocab_
        self.schedule_ = denoiser.schedule_
        self.n_features_in_ = denoiser.n_features_in_
        return self

    @property
    def erased_params_(self):
        _require_fitted(self, "student_")
        return self.teacher_ if self.teacher_ is not None else self.student_

    def predictor(self):
        _require_fitted(self, "student_")
        return model_predictor(self.erased_params_, self.vocab_,
                               self.schedule_)

    def sample(self, n: int, concept_ids=(), s_g: float = 7.5,
               n_steps: int = 25, random_state=None) -> np.ndarray:
        _require_fitted(self, "student_")
        seed = self.random_state if random_state is None else random_state
        gen = as_generator(RngStream(seed, 4))
        z = gen.standard_normal((int(n), self.n_features_in_))
        guidance = GuidanceConfig(method="cfg", s_g=s_g,
                                  prompt_ids=tuple(concept_ids))
        grid = timestep_grid(self.schedule_.T, n_steps)
        return denoise(z, self.predictor(), guidance, self.schedule_, grid)
