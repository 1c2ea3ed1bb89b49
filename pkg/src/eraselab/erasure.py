"""Concept-removal fine-tuning: self-distillation and negative-guidance variants.

Two families live here. The self-distillation loop pulls the student's
concept-conditioned estimate toward its own frozen-per-step unconditional
estimate while an EMA teacher both generates the training latents and serves
as the final safe model. The negative-guidance loop instead regresses the
student onto a frozen base model's negatively guided target. Inference-time
methods (negative prompt, masked safety guidance) are pure functions in the
guidance module; this module owns everything that changes parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError
from .guidance import GuidanceConfig
from .metrics import frechet_distance
from .network import (
    ConceptVocabulary,
    ModelParams,
    backward,
    embed_concepts,
    forward,
    model_predictor,
    select_group,
)
from .optim import AdamW, OptimConfig, lr_at
from .oracle import ConceptMixture, bayes_posterior
from .rng import as_generator
from .sampling import denoise, timestep_grid
from .schedule import NoiseSchedule
from .validation import check_concept_ids

ERASE_METHODS = ("sdd", "esd_x", "esd_u", "esd_all")

# parameter group each method is allowed to move
METHOD_GROUPS = {"sdd": "conditioning", "esd_x": "conditioning",
                 "esd_u": "trunk", "esd_all": "all"}

# Per-method training budgets. Self-distillation needs the student converged
# well before the end so the slow EMA teacher can settle inside the run, hence
# the hot learning rate. The negative-guidance family regresses onto a target
# past the unconditional field and would invert the concept outright if run to
# convergence at this scale, so its budget stops at partial removal.
METHOD_ITERS = {"sdd": 1500, "esd_x": 1000, "esd_u": 1000, "esd_all": 1000}
METHOD_OPTIM = {
    "sdd": OptimConfig(lr=1e-3, schedule="cosine", warmup=500),
    "esd_x": OptimConfig(lr=4e-5, schedule="cosine", warmup=333),
    "esd_u": OptimConfig(lr=4e-5, schedule="cosine", warmup=333),
    "esd_all": OptimConfig(lr=4e-5, schedule="cosine", warmup=333),
}

EVAL_CFG_SCALE = 1.0
EVAL_SAMPLER_STEPS = 25
EVAL_THRESHOLD = 0.7


@dataclass(frozen=True)
class EraseConfig:
    """Settings for one fine-tuning run.

    n_iters and optim default to the method's entry in METHOD_ITERS and
    METHOD_OPTIM when left as None.
    """

    method: str
    target_ids: tuple[int, ...]
    n_iters: int | None = None
    sampler_steps: int = 100
    ema_momentum: float = 0.999
    s_g: float = 3.0
    s_s: float = 3.0
    optim: OptimConfig | None = None
    group: str | None = None
    micro_batch: int = 1
    eval_every: int = 100
    eval_n: int = 1024

    def __post_init__(self):
        if self.method not in ERASE_METHODS:
            raise ValueError(f"unknown erase method {self.method!r}")
        if self.n_iters is None:
            object.__setattr__(self, "n_iters", METHOD_ITERS[self.method])
        if self.optim is None:
            object.__setattr__(self, "optim", METHOD_OPTIM[self.method])
        if not isinstance(self.optim, OptimConfig):
            raise TypeError("optim must be an OptimConfig")
        ids = tuple(int(i) for i in self.target_ids)
        if not ids:
            raise ValueError("target_ids must name at least one concept")
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate target ids: {ids}")
        object.__setattr__(self, "target_ids", ids)
        if self.n_iters < 0:
            raise ValueError(f"n_iters must be >= 0, got {self.n_iters}")
        if self.sampler_steps < 1:
            raise ValueError(f"sampler_steps must be >= 1, got {self.sampler_steps}")
        if not 0.0 <= self.ema_momentum <= 1.0:
            raise ValueError(f"ema_momentum must lie in [0, 1], got {self.ema_momentum}")
        for name in ("s_g", "s_s"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.micro_batch < 1:
            raise ValueError(f"micro_batch must be >= 1, got {self.micro_batch}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.eval_n < 3:
            raise ValueError(f"eval_n must be >= 3, got {self.eval_n}")

    @property
    def resolved_group(self) -> str:
        return self.group if self.group is not None else METHOD_GROUPS[self.method]


@dataclass
class TrainerState:
    """Mutable loop state: models, optimizer, progress."""

    student: ModelParams
    teacher: ModelParams | None
    opt: AdamW
    iteration: int = 0
    loss_history: list = field(default_factory=list)


@dataclass
class EvalSnapshot:
    """Checkpoint plus quick metrics recorded at the evaluation cadence."""

    iteration: int
    frechet_to_uncond: float
    erased_fraction: float  # NaN when no mixture was supplied
    student: ModelParams
    teacher: ModelParams | None


@dataclass
class EraseHistory:
    losses: np.ndarray
    lrs: np.ndarray
    prompts: list  # conditioning ids used for latent generation, per iteration
    snapshots: list
    clamped_t_events: int = 0

    def snapshot_series(self, attr: str):
        its = np.array([s.iteration for s in self.snapshots])
        vals = np.array([getattr(s, attr) for s in self.snapshots])
        return its, vals


def ema_update(teacher: ModelParams, student: ModelParams, m: float) -> ModelParams:
    """Convex combination m*teacher + (1-m)*student over every parameter."""
    if teacher.arch != student.arch:
        raise ValueError("teacher and student architectures differ")
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum must lie in [0, 1], got {m}")
    if m == 1.0:
        return teacher.clone()
    if m == 0.0:
        return student.clone()
    tensors = {
        k: m * teacher.tensors[k] + (1.0 - m) * student.tensors[k]
        for k in teacher.tensors
    }
    return ModelParams(teacher.arch, tensors)


def generate_latent(predict, c_p, t: int, s_g: float, sched: NoiseSchedule, rng,
                    n: int | None = None, n_steps: int | None = None,
                    dim: int = 2):
    """Partially denoised latent z_t drawn with classifier-free guidance.

    Starts from z_T ~ N(0, I) and runs deterministic DDIM along the step
    grid down to t. `predict` is any predictor closure, so an oracle can
    stand in for a model. With n given, returns (n, dim) latents sharing
    the grid; otherwise a single vector.
    """
    if not 0 <= int(t) <= sched.T - 1:
        raise ValueError(f"t must lie in [0, {sched.T - 1}], got {t}")
    t = int(t)
    grid = timestep_grid(sched.T, sched.T if n_steps is None else n_steps)
    grid = np.append(grid[grid > t], t)
    gen = as_generator(rng)
    shape = (int(dim),) if n is None else (int(n), int(dim))
    z = gen.standard_normal(shape)
    guidance = GuidanceConfig(method="cfg", s_g=s_g, prompt_ids=tuple(c_p))
    return denoise(z, predict, guidance, sched, grid, sampler="ddim")


def sdd_loss(params: ModelParams, vocab: ConceptVocabulary, z_t, t: int,
             c_s, sched: NoiseSchedule):
    """Self-distillation objective and its stop-gradient parameter gradient.

    Mean squared difference between the concept-conditioned estimate and the
    unconditional estimate at the same point, with the unconditional branch
    treated as a constant: the returned gradient flows only through the
    conditional forward pass.
    """
    if not 1 <= int(t) <= sched.T:
        raise ValueError(f"t must lie in [1, {sched.T}], got {t}")
    eps_c, cache = forward(params, vocab, z_t, int(t), tuple(c_s), sched)
    eps_u, _ = forward(params, vocab, z_t, int(t), (), sched)
    res = np.atleast_2d(eps_c - eps_u)
    loss = float((res * res).mean())
    grad = backward(params, cache, 2.0 * res / res.size)
    return loss, grad


def esd_target(frozen: ModelParams, vocab: ConceptVocabulary, z_t, t: int,
               c_s, s_s: float, sched: NoiseSchedule) -> np.ndarray:
    """Negatively guided regression target from the unmodified base model."""
    eps_u = forward(frozen, vocab, z_t, int(t), (), sched)[0]
    eps_c = forward(frozen, vocab, z_t, int(t), tuple(c_s), sched)[0]
    return eps_u - float(s_s) * (eps_c - eps_u)


def _grid_timesteps(sched: NoiseSchedule, sampler_steps: int) -> np.ndarray:
    # targets reachable by one-or-more sampler steps: every grid entry below T
    grid = timestep_grid(sched.T, sampler_steps)
    return grid[1:]


def _snapshot(model: ModelParams, vocab, sched, cfg, mix, target_ids, gen,
              iteration, student, teacher):
    predict = model_predictor(model, vocab, sched)
    n_steps = min(EVAL_SAMPLER_STEPS, cfg.sampler_steps)
    cond = generate_latent(predict, target_ids, 0, EVAL_CFG_SCALE, sched, gen,
                           n=cfg.eval_n, n_steps=n_steps, dim=model.arch.D)
    uncond = generate_latent(predict, (), 0, EVAL_CFG_SCALE, sched, gen,
                             n=cfg.eval_n, n_steps=n_steps, dim=model.arch.D)
    fd = frechet_distance(cond, uncond)
    if mix is None:
        frac = float("nan")
    else:
        post = bayes_posterior(mix, cond)[:, [i - 1 for i in target_ids]]
        frac = float((post.max(axis=1) >= EVAL_THRESHOLD).mean())
    return EvalSnapshot(
        iteration=iteration,
        frechet_to_uncond=float(fd),
        erased_fraction=frac,
        student=student.clone(),
        teacher=None if teacher is None else teacher.clone(),
    )


def _run_finetune(base, cfg, vocab, sched, rng, mix, latent_model, loss_fn):
    """Shared fine-tuning loop; the two hooks define the method.

    latent_model(state) picks which params generate this iteration's latent;
    loss_fn(state, z_t, t) returns (loss, grad, prompt_ids_used).
    """
    check_concept_ids(cfg.target_ids, vocab.K, "target_ids")
    if cfg.sampler_steps > sched.T:
        raise ValueError(
            f"sampler_steps {cfg.sampler_steps} exceeds schedule length {sched.T}"
        )
    gen = as_generator(rng)
    state = TrainerState(
        student=base.clone(),
        teacher=base.clone() if cfg.method == "sdd" else None,
        opt=AdamW(cfg.optim),
    )
    group_keys = state.student.group_keys(cfg.resolved_group)
    t_choices = _grid_timesteps(sched, cfg.sampler_steps)
    losses = np.empty(cfg.n_iters)
    lrs = np.empty(cfg.n_iters)
    prompts = []
    clamps = 0
    snapshots = []

    def record(iteration):
        model = state.teacher if cfg.method == "sdd" else state.student
        snapshots.append(
            _snapshot(model, vocab, sched, cfg, mix, cfg.target_ids, gen,
                      iteration, state.student, state.teacher)
        )

    def diverged(iteration, cause):
        err = DivergenceError(
            f"{cause} at iteration {iteration}; "
            f"last checkpoint at iteration {snapshots[-1].iteration}"
        )
        err.state = state
        err.last_snapshot = snapshots[-1]
        return err

    record(0)
    for i in range(cfg.n_iters):
        t = int(t_choices[gen.integers(len(t_choices))])
        prompt = latent_prompt(cfg, gen)
        try:
            z_t = generate_latent(
                model_predictor(latent_model(state), vocab, sched),
                prompt, t, cfg.s_g, sched, gen,
                n=None if cfg.micro_batch == 1 else cfg.micro_batch,
                n_steps=cfg.sampler_steps,
                dim=base.arch.D,
            )
            if t == 0:
                t = 1
                clamps += 1
            loss, grad = loss_fn(state, z_t, t, prompt)
        except FloatingPointError as exc:
            raise diverged(i, str(exc)) from exc
        if not np.isfinite(loss):
            raise diverged(i, "loss became non-finite")
        grad = select_group(grad, state.student, cfg.resolved_group)
        lr = lr_at(cfg.optim, i, cfg.n_iters)
        state.opt.step(state.student.tensors, grad, lr, keys=group_keys)
        if any(not np.all(np.isfinite(state.student.tensors[key]))
               for key in group_keys):
            raise diverged(i, "parameters became non-finite after update")
        if cfg.method == "sdd":
            state.teacher = ema_update(state.teacher, state.student,
                                       cfg.ema_momentum)
        state.iteration = i + 1
        losses[i] = loss
        lrs[i] = lr
        prompts.append(prompt)
        state.loss_history.append(loss)
        if (i + 1) % cfg.eval_every == 0 or i + 1 == cfg.n_iters:
            if not snapshots or snapshots[-1].iteration != i + 1:
                try:
                    record(i + 1)
                except FloatingPointError as exc:
                    raise diverged(i + 1, str(exc)) from exc
    history = EraseHistory(losses=losses, lrs=lrs, prompts=prompts,
                           snapshots=snapshots, clamped_t_events=clamps)
    return state, history


def latent_prompt(cfg: EraseConfig, gen) -> tuple[int, ...]:
    """Conditioning ids used to generate this iteration's latent."""
    if cfg.method == "sdd":
        # one concept at a time, even (especially) for multi-concept runs
        return (int(cfg.target_ids[gen.integers(len(cfg.target_ids))]),)
    return cfg.target_ids


def sdd_finetune(base: ModelParams, cfg: EraseConfig, vocab: ConceptVocabulary,
                 sched: NoiseSchedule, rng, mix: ConceptMixture | None = None):
    """Self-distillation erasure; returns (student, EMA teacher, history).

    Per iteration: draw a timestep and a single random target concept,
    generate z_t from the EMA teacher under CFG, take one optimizer step on
    the stop-gradient objective restricted to the conditioning group, then
    fold the student into the teacher.
    """
    if cfg.method != "sdd":
        raise ValueError(f"sdd_finetune needs method 'sdd', got {cfg.method!r}")

    def loss_fn(state, z_t, t, _prompt):
        return sdd_loss(state.student, vocab, z_t, t, cfg.target_ids, sched)

    state, history = _run_finetune(
        base, cfg, vocab, sched, rng, mix,
        latent_model=lambda state: state.teacher,
        loss_fn=loss_fn,
    )
    return state.student, state.teacher, history


def esd_finetune(base: ModelParams, cfg: EraseConfig, vocab: ConceptVocabulary,
                 sched: NoiseSchedule, rng, mix: ConceptMixture | None = None):
    """Negative-guidance erasure; returns (student, history).

    Latents come from the current student itself (guided on the target), and
    the regression target is the frozen base model's negatively guided
    estimate. The method name picks the trainable group: esd_x moves only
    the conditioning pathway, esd_u only the trunk, esd_all everything.
    """
    if cfg.method == "sdd":
        raise ValueError("esd_finetune handles esd_* methods only")
    frozen = base.clone()

    def loss_fn(state, z_t, t, _prompt):
        target = esd_target(frozen, vocab, z_t, t, cfg.target_ids, cfg.s_s, sched)
        eps_c, cache = forward(state.student, vocab, z_t, t, cfg.target_ids, sched)
        res = np.atleast_2d(eps_c - target)
        loss = float((res * res).mean())
        grad = backward(state.student, cache, 2.0 * res / res.size)
        return loss, grad

    state, history = _run_finetune(
        base, cfg, vocab, sched, rng, mix,
        latent_model=lambda state: state.student,
        loss_fn=loss_fn,
    )
    return state.student, history
