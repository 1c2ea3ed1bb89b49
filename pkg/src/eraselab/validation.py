"""Input-validation helpers for the functional core.

Estimator classes use sklearn's validators; these are the lighter checks
used by the plain functions, kept centralized so error wording stays
consistent.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimension(s), got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_timestep(t, T: int, low: int = 1) -> int:
    if not isinstance(t, (int, np.integer)) or isinstance(t, bool):
        raise ValueError(f"timestep must be an integer, got {t!r}")
    t = int(t)
    if not low <= t <= T:
        raise ValueError(f"timestep {t} outside [{low}, {T}]")
    return t


def check_concept_ids(ids, n_concepts: int, name: str = "concept ids") -> tuple[int, ...]:
    """Validate a tuple of concept ids (1-based, 0 is the empty token)."""
    out = []
    for i in np.atleast_1d(np.asarray(ids, dtype=object)):
        if not isinstance(i, (int, np.integer)) or isinstance(i, bool):
            raise ValueError(f"{name} must be integers, got {i!r}")
        i = int(i)
        if not 1 <= i <= n_concepts:
            raise ValueError(f"{name} entry {i} outside [1, {n_concepts}]")
        out.append(i)
    return tuple(out)
