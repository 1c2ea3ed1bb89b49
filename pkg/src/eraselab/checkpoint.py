"""Model checkpoints: architecture + vocabulary + parameters in one container.

Tensors are stored as little-endian float32 in sorted-name order, so a
save/load/save cycle is byte-identical. In-memory math stays float64; the
one-time precision truncation happens at the first save.
"""

from __future__ import annotations

from dataclasses import asdict

import numpy as np

from .container import read_container, write_container
from .network import ArchitectureConfig, ConceptVocabulary, ModelParams

CHECKPOINT_FORMAT_VERSION = 1


def save_model(path, params: ModelParams, vocab: ConceptVocabulary,
               meta: dict | None = None):
    """Write params and the embedding table; meta rides along in the manifest."""
    if vocab.d_e != params.arch.d_e:
        raise ValueError(
            f"vocabulary width {vocab.d_e} does not match architecture d_e "
            f"{params.arch.d_e}"
        )
    manifest = {
        "kind": "checkpoint",
        "version": CHECKPOINT_FORMAT_VERSION,
        "architecture": asdict(params.arch),
        "concept_names": list(vocab.names),
        "meta": dict(meta or {}),
    }
    tensors = [(f"params/{k}", params.tensors[k]) for k in sorted(params.tensors)]
    tensors.append(("vocab/table", vocab.table))
    write_container(path, manifest, tensors)


def load_model(path):
    """Read a checkpoint; returns (params, vocab, meta)."""
    manifest, arrays = read_container(path)
    if manifest.get("kind") != "checkpoint":
        raise ValueError(
            f"{path} is not a checkpoint file (kind={manifest.get('kind')!r})"
        )
    if manifest.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')!r}")
    arch = ArchitectureConfig(**manifest["architecture"])
    tensors = {
        name[len("params/"):]: arr.astype(np.float64)
        for name, arr in arrays.items()
        if name.startswith("params/")
    }
    params = ModelParams(arch, tensors)
    vocab = ConceptVocabulary(
        names=tuple(manifest["concept_names"]),
        table=arrays["vocab/table"].astype(np.float64),
    )
    if vocab.d_e != arch.d_e:
        raise ValueError(f"{path}: embedding table width does not match architecture")
    return params, vocab, dict(manifest.get("meta", {}))
