"""Desk-scale lab for concept erasure in conditional diffusion models.

The package trains a small conditional denoiser on labeled 2-D Gaussian
mixtures, applies training-time erasure (self-distillation and negative
guidance fine-tuning) and inference-time defenses (negative prompt, safe
latent guidance, semantic guidance), and evaluates everything against the
mixture's closed-form oracle.
"""

from .checkpoint import load_model, save_model
from .config import RunConfig, load_config
from .data import LabeledDataset, load_dataset, make_mixture, preset_mixture, save_dataset
from .erasure import EraseConfig, EraseHistory, esd_finetune, sdd_finetune
from .errors import ChecksumError, ConfigError, DivergenceError
from .estimators import ConceptEraser, DiffusionDenoiser
from .guidance import GuidanceConfig
from .metrics import (
    EvalReport,
    SamplerSettings,
    alignment_score,
    erased_fraction,
    frechet_distance,
    interference_matrix,
    paired_divergence,
)
from .network import ArchitectureConfig, ConceptVocabulary, ModelParams, make_vocab, model_predictor
from .optim import OptimConfig
from .oracle import MixtureSpec, bayes_posterior, optimal_noise, oracle_predictor
from .rng import RngStream
from .sampling import denoise, sample_batch, sample_trajectory, timestep_grid
from .schedule import NoiseSchedule, build_schedule, ddim_step, ddpm_step, q_sample
from .svgplot import render_scatter, save_scatter
from .training import TrainConfig, TrainResult, train_base

__version__ = "0.1.0"

__all__ = [
    "ArchitectureConfig",
    "ChecksumError",
    "ConceptEraser",
    "ConceptVocabulary",
    "ConfigError",
    "DiffusionDenoiser",
    "DivergenceError",
    "EraseConfig",
    "EraseHistory",
    "EvalReport",
    "GuidanceConfig",
    "LabeledDataset",
    "MixtureSpec",
    "ModelParams",
    "NoiseSchedule",
    "OptimConfig",
    "RunConfig",
    "SamplerSettings",
    "TrainConfig",
    "TrainResult",
    "alignment_score",
    "bayes_posterior",
    "build_schedule",
    "ddim_step",
    "ddpm_step",
    "denoise",
    "erased_fraction",
    "esd_finetune",
    "frechet_distance",
    "interference_matrix",
    "load_config",
    "load_dataset",
    "load_model",
    "make_mixture",
    "make_vocab",
    "model_predictor",
    "optimal_noise",
    "oracle_predictor",
    "paired_divergence",
    "preset_mixture",
    "q_sample",
    "render_scatter",
    "sample_batch",
    "sample_trajectory",
    "save_dataset",
    "save_model",
    "save_scatter",
    "sdd_finetune",
    "timestep_grid",
    "train_base",
]
