"""Labeled synthetic datasets: presets, sampling, and the on-disk format."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .oracle import ConceptMixture, GaussianComponent, MixtureSpec
from .rng import RngStream

DATASET_FORMAT_VERSION = 1

# Preset geometry. Concepts 1 and 2 carry deliberately small prior mass:
# they are the "erasable" concepts, and the erased-fraction floor of a
# perfectly erased model equals the target's prior, so the rare-concept
# asymmetry is what makes erasure measurable at all.
FOUR_CORNERS_PRIORS = (0.05, 0.05, 0.45, 0.45)
FOUR_CORNERS_VAR = 0.25


def four_corners() -> MixtureSpec:
    """Four well-separated concepts at (+-4, +-4), sigma^2 = 0.25.

    Corner order: 1 -> (4, 4), 2 -> (-4, 4), 3 -> (-4, -4), 4 -> (4, -4).
    Nearest means are 8 apart, 16 standard deviations.
    """
    corners = ((4.0, 4.0), (-4.0, 4.0), (-4.0, -4.0), (4.0, -4.0))
    return MixtureSpec(
        concepts=tuple(
            ConceptMixture(
                name=f"corner-{i + 1}",
                prior=FOUR_CORNERS_PRIORS[i],
                components=(GaussianComponent(weight=1.0, mean=corners[i], var=FOUR_CORNERS_VAR),),
            )
            for i in range(4)
        )
    )


def rings() -> MixtureSpec:
    """Four bimodal concepts, two adjacent lobes each on a radius-4 ring."""
    concepts = []
    n_concepts = 4
    radius = 4.0
    for k in range(n_concepts):
        comps = []
        for half in range(2):
            angle = 2.0 * np.pi * (2 * k + half) / (2 * n_concepts)
            comps.append(
                GaussianComponent(
                    weight=0.5,
                    mean=(radius * float(np.cos(angle)), radius * float(np.sin(angle))),
                    var=0.25,
                )
            )
        concepts.append(
            ConceptMixture(name=f"ring-{k + 1}", prior=1.0 / n_concepts, components=tuple(comps))
        )
    return MixtureSpec(concepts=tuple(concepts))


def overlap() -> MixtureSpec:
    """Two concepts sharing a central component, to stress interference."""
    shared = GaussianComponent(weight=0.5, mean=(0.0, 0.0), var=0.25)
    return MixtureSpec(
        concepts=(
            ConceptMixture(
                name="left",
                prior=0.5,
                components=(GaussianComponent(weight=0.5, mean=(-3.0, 0.0), var=0.25), shared),
            ),
            ConceptMixture(
                name="right",
                prior=0.5,
                components=(GaussianComponent(weight=0.5, mean=(3.0, 0.0), var=0.25), shared),
            ),
        )
    )


PRESETS = {"four-corners": four_corners, "rings": rings, "overlap": overlap}


def preset_mixture(name: str) -> MixtureSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class LabeledDataset:
    """Points with 1-based concept labels plus their generating mixture."""

    points: np.ndarray  # (n, D) float
    labels: np.ndarray  # (n,) int32
    mixture: MixtureSpec
    seed: int

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int32)
        if points.ndim != 2:
            raise ValueError(f"points must be 2-D, got shape {points.shape}")
        if labels.shape != (points.shape[0],):
            raise ValueError(
                f"labels shape {labels.shape} does not match {points.shape[0]} points"
            )
        if points.shape[1] != self.mixture.D:
            raise ValueError(
                f"points dimension {points.shape[1]} != mixture dimension {self.mixture.D}"
            )
        if labels.size and (labels.min() < 1 or labels.max() > self.mixture.K):
            raise ValueError(f"labels must lie in [1, {self.mixture.K}]")
        points.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.points.shape[0]


def make_mixture(preset, seed: int, n: int) -> LabeledDataset:
    """Sample a labeled dataset from a preset name or explicit MixtureSpec."""
    if isinstance(preset, str):
        mix = preset_mixture(preset)
    elif isinstance(preset, MixtureSpec):
        mix = preset
    else:
        raise TypeError(f"preset must be a name or MixtureSpec, got {type(preset).__name__}")
    if int(n) < 1:
        raise ValueError(f"n must be positive, got {n}")
    points, labels = mix.sample(int(n), RngStream(int(seed), 0))
    # stored as float32 on disk; round now so save/load is lossless
    points = points.astype(np.float32).astype(np.float64)
    return LabeledDataset(points=points, labels=labels, mixture=mix, seed=int(seed))


def save_dataset(path, ds: LabeledDataset):
    meta = {
        "kind": "dataset",
        "version": DATASET_FORMAT_VERSION,
        "mixture_json": ds.mixture.to_json(),
        "mixture_hash": ds.mixture.spec_hash(),
        "seed": ds.seed,
        "n": ds.n,
        "dim": ds.mixture.D,
    }
    write_container(path, meta, [("points", ds.points), ("labels", ds.labels)])


def load_dataset(path) -> LabeledDataset:
    meta, arrays = read_container(path)
    if meta.get("kind") != "dataset":
        raise ValueError(f"{path} is not a dataset file (kind={meta.get('kind')!r})")
    if meta.get("version") != DATASET_FORMAT_VERSION:
        raise ValueError(f"unsupported dataset version {meta.get('version')!r}")
    mix = MixtureSpec.from_json(meta["mixture_json"])
    if mix.spec_hash() != meta["mixture_hash"]:
        raise ValueError(f"{path}: mixture hash does not match its JSON")
    return LabeledDataset(
        points=arrays["points"].astype(np.float64),
        labels=arrays["labels"],
        mixture=mix,
        seed=int(meta["seed"]),
    )
