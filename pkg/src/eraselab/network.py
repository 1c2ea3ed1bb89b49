"""Conditional noise predictor: MLP trunk with one cross-attention block.

The trunk maps x_t concatenated with a sinusoidal time embedding through
n_hidden SiLU stages; a single-head cross-attention block is inserted after
the middle stage and adds its output residually. Conditioning enters only
through that block, so "fine-tune the conditioning pathway" is a crisp
parameter-group statement: the attention projections form the
``conditioning`` group, everything else the ``trunk`` group.

The unconditional estimate is not a separate network: it is the same
forward pass attending over the reserved empty token (vocabulary row 0).

All math is float64 and hand-differentiated; gradients are exact reverse
mode, which the finite-difference tests pin down to 1e-5 relative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import RngStream, as_generator
from .validation import as_float_array

NONLINEARITIES = ("silu", "identity")
PARAM_GROUPS = ("conditioning", "trunk", "all")
CONDITIONING_PREFIX = "attn."


@dataclass(frozen=True)
class ArchitectureConfig:
    """Shape parameters of the denoiser."""

    D: int = 2
    H: int = 128
    n_hidden: int = 3
    d_e: int = 16
    d_t: int = 32
    nonlinearity: str = "silu"

    def __post_init__(self):
        for name in ("D", "H", "n_hidden", "d_e", "d_t"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if self.d_t % 2 != 0:
            raise ValueError(f"d_t must be even for sin/cos pairs, got {self.d_t}")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")

    def param_count(self) -> int:
        """Closed-form parameter count, checked against the live layout."""
        d_in = self.D + self.d_t
        trunk = (d_in * self.H + self.H)
        trunk += (self.n_hidden - 1) * (self.H * self.H + self.H)
        trunk += self.H * self.D + self.D
        attn = self.H * self.d_e + 2 * self.d_e * self.d_e + self.d_e * self.H
        return trunk + attn

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [(self.D + self.d_t, self.H)]
        dims += [(self.H, self.H)] * (self.n_hidden - 1)
        dims += [(self.H, self.D)]
        return dims

    @property
    def attn_after(self) -> int:
        # hidden stage index the attention block follows (1-based)
        return (self.n_hidden + 1) // 2


@dataclass(frozen=True)
class ConceptVocabulary:
    """Concept names plus a frozen embedding table; row 0 is the empty token."""

    names: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        if not names or len(set(names)) != len(names) or any(not n for n in names):
            raise ValueError(f"concept names must be unique and nonempty, got {names}")
        table = as_float_array(self.table, "table", ndim=2)
        if table.shape[0] != len(names) + 1:
            raise ValueError(
                f"table needs {len(names) + 1} rows (empty token + concepts), "
                f"got {table.shape[0]}"
            )
        table = table.copy()
        table.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "table", table)

    @property
    def K(self) -> int:
        return len(self.names)

    @property
    def d_e(self) -> int:
        return int(self.table.shape[1])


def make_vocab(names, d_e: int, rng) -> ConceptVocabulary:
    """Embedding table with orthonormal rows scaled to norm sqrt(d_e).

    Orthogonality keeps first-order cross-talk between concepts out of the
    value/output projections, so interference measurements reflect the
    erasure method rather than embedding overlap.
    """
    names = tuple(names)
    rows = len(names) + 1
    if rows > d_e:
        raise ValueError(f"{rows} embedding rows need d_e >= {rows}, got {d_e}")
    gen = as_generator(rng)
    q, r = np.linalg.qr(gen.standard_normal((d_e, rows)))
    q = q * np.sign(np.diag(r))  # deterministic sign convention
    return ConceptVocabulary(names=names, table=q.T * np.sqrt(d_e))


def embed_concepts(vocab: ConceptVocabulary, ids) -> np.ndarray:
    """Token sequence (L, d_e) for 1-based concept ids; [] or [0] -> empty token."""
    ids = tuple(int(i) for i in ids)
    if ids == ():
        ids = (0,)
    if 0 in ids and any(i != 0 for i in ids):
        raise ValueError(f"empty token cannot be combined with concepts: {ids}")
    for i in ids:
        if not 0 <= i <= vocab.K:
            raise ValueError(f"concept id {i} outside [0, {vocab.K}]")
    return vocab.table[list(ids)]


def time_embedding(t, d_t: int, T: int) -> np.ndarray:
    """Sinusoidal features with geometric frequencies spanning [1/T, 1]."""
    if d_t < 2 or d_t % 2 != 0:
        raise ValueError(f"d_t must be a positive even integer, got {d_t}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > T):
        raise ValueError(f"t outside [0, {T}]")
    exponents = np.linspace(0.0, 1.0, d_t // 2)
    freqs = (1.0 / T) ** (1.0 - exponents)
    angles = t_arr[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


@dataclass
class ModelParams:
    """Named parameter tensors plus the architecture that shapes them."""

    arch: ArchitectureConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = expected_keys(self.arch)
        if set(self.tensors) != set(expected):
            missing = set(expected) - set(self.tensors)
            extra = set(self.tensors) - set(expected)
            raise ValueError(f"parameter keys mismatch: missing={missing}, extra={extra}")
        total = 0
        for key, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in parameter {key}")
            total += arr.size
        if total != self.arch.param_count():
            raise ValueError(
                f"parameter count {total} != closed-form {self.arch.param_count()}"
            )

    def group_keys(self, group: str) -> tuple[str, ...]:
        if group not in PARAM_GROUPS:
            raise ValueError(f"unknown parameter group {group!r}")
        if group == "all":
            return tuple(self.tensors)
        cond = group == "conditioning"
        return tuple(
            k for k in self.tensors if k.startswith(CONDITIONING_PREFIX) == cond
        )

    def clone(self) -> "ModelParams":
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def expected_keys(arch: ArchitectureConfig) -> tuple[str, ...]:
    keys = []
    for i in range(len(arch.layer_dims())):
        keys += [f"trunk.w{i}", f"trunk.b{i}"]
    keys += ["attn.wq", "attn.wk", "attn.wv", "attn.wo"]
    return tuple(keys)


def init_params(arch: ArchitectureConfig, rng) -> ModelParams:
    """Fan-in-scaled uniform init; the attention output projection starts at
    zero so the fresh model is exactly unconditional."""
    gen = as_generator(rng)
    tensors = {}
    for i, (fan_in, fan_out) in enumerate(arch.layer_dims()):
        bound = 1.0 / np.sqrt(fan_in)
        tensors[f"trunk.w{i}"] = gen.uniform(-bound, bound, (fan_in, fan_out))
        tensors[f"trunk.b{i}"] = gen.uniform(-bound, bound, fan_out)
    tensors["attn.wq"] = gen.uniform(-1, 1, (arch.H, arch.d_e)) / np.sqrt(arch.H)
    tensors["attn.wk"] = gen.uniform(-1, 1, (arch.d_e, arch.d_e)) / np.sqrt(arch.d_e)
    tensors["attn.wv"] = gen.uniform(-1, 1, (arch.d_e, arch.d_e)) / np.sqrt(arch.d_e)
    tensors["attn.wo"] = np.zeros((arch.d_e, arch.H))
    return ModelParams(arch, tensors)


def zeros_like_params(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def select_group(grad: dict, params: ModelParams, group: str) -> dict:
    """Zero every gradient entry outside the chosen parameter group."""
    keep = set(params.group_keys(group))
    return {k: (v if k in keep else np.zeros_like(v)) for k, v in grad.items()}


def _silu(z):
    with np.errstate(over="ignore"):  # exp(-z) -> inf gives the correct s = 0
        s = 1.0 / (1.0 + np.exp(-z))
    return z * s, s


def _silu_grad(z, s):
    return s * (1.0 + z * (1.0 - s))


def _activation(arch, z):
    if arch.nonlinearity == "identity":
        return z, None
    return _silu(z)


def _activation_grad(arch, z, s):
    if arch.nonlinearity == "identity":
        return np.ones_like(z)
    return _silu_grad(z, s)


def forward(params: ModelParams, vocab: ConceptVocabulary, x, t, cond_ids, sched):
    """Batched forward pass; returns (eps, cache) for one shared token sequence.

    x is (n, D) or (D,); t a scalar timestep or per-row array in [0, T].
    """
    arch = params.arch
    x = as_float_array(x, "x")
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != arch.D:
        raise ValueError(f"x has dimension {x.shape[-1]}, model expects {arch.D}")
    tokens = cond_ids if isinstance(cond_ids, np.ndarray) else embed_concepts(vocab, cond_ids)
    temb = time_embedding(t, arch.d_t, sched.T)
    if temb.ndim == 1:
        temb = np.broadcast_to(temb, (x.shape[0], arch.d_t))
    h = np.concatenate([x, np.ascontiguousarray(temb)], axis=-1)
    p = params.tensors
    cache = {"tokens": tokens, "inputs": h, "squeeze": squeeze}
    n_stages = arch.n_hidden
    for i in range(n_stages):
        z = h @ p[f"trunk.w{i}"] + p[f"trunk.b{i}"]
        h, s = _activation(arch, z)
        cache[f"z{i}"], cache[f"s{i}"], cache[f"h{i}"] = z, s, h
        if i + 1 == arch.attn_after:
            h = h + _attention_forward(p, h, tokens, cache)
            cache["h_attn"] = h
    eps = h @ p[f"trunk.w{n_stages}"] + p[f"trunk.b{n_stages}"]
    if not np.all(np.isfinite(eps)):
        raise FloatingPointError("non-finite noise estimate")
    return (eps[0] if squeeze else eps), cache


def _attention_forward(p, h, tokens, cache):
    d_e = tokens.shape[1]
    q = h @ p["attn.wq"]  # (n, d_e)
    keys = tokens @ p["attn.wk"]  # (L, d_e)
    values = tokens @ p["attn.wv"]  # (L, d_e)
    logits = q @ keys.T / np.sqrt(d_e)  # (n, L)
    logits = logits - logits.max(axis=-1, keepdims=True)
    attn = np.exp(logits)
    attn /= attn.sum(axis=-1, keepdims=True)
    ctx = attn @ values  # (n, d_e)
    cache.update(
        {"attn.in": h, "attn.q": q, "attn.k": keys, "attn.v": values,
         "attn.a": attn, "attn.ctx": ctx}
    )
    return ctx @ p["attn.wo"]


def _stage_input(cache, attn_after: int, i: int):
    """Activation feeding trunk layer i; post-residual right after attention."""
    if i == 0:
        return cache["inputs"]
    return cache["h_attn"] if i == attn_after else cache[f"h{i - 1}"]


def backward(params: ModelParams, cache, upstream) -> dict[str, np.ndarray]:
    """Gradient of sum_i <upstream_i, eps_i> in the ModelParams layout."""
    arch = params.arch
    p = params.tensors
    d = np.atleast_2d(as_float_array(upstream, "upstream"))
    grad = {}
    n_stages = arch.n_hidden
    a = arch.attn_after
    grad[f"trunk.w{n_stages}"] = _stage_input(cache, a, n_stages).T @ d
    grad[f"trunk.b{n_stages}"] = d.sum(axis=0)
    dh = d @ p[f"trunk.w{n_stages}"].T
    for i in reversed(range(n_stages)):
        if i + 1 == a:
            # dh holds d/d(h_attn); the residual add contributes identity
            dh = dh + _attention_backward(p, cache, dh, grad)
        dz = dh * _activation_grad(arch, cache[f"z{i}"], cache[f"s{i}"])
        grad[f"trunk.w{i}"] = _stage_input(cache, a, i).T @ dz
        grad[f"trunk.b{i}"] = dz.sum(axis=0)
        dh = dz @ p[f"trunk.w{i}"].T
    return grad


def _attention_backward(p, cache, dh, grad):
    tokens = cache["tokens"]
    d_e = tokens.shape[1]
    q, keys, values = cache["attn.q"], cache["attn.k"], cache["attn.v"]
    attn, ctx = cache["attn.a"], cache["attn.ctx"]
    grad["attn.wo"] = ctx.T @ dh
    dctx = dh @ p["attn.wo"].T  # (n, d_e)
    dattn = dctx @ values.T  # (n, L)
    dvalues = attn.T @ dctx  # (L, d_e)
    dlogits = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dlogits /= np.sqrt(d_e)
    dq = dlogits @ keys  # (n, d_e)
    dkeys = dlogits.T @ q  # (L, d_e)
    grad["attn.wq"] = cache["attn.in"].T @ dq
    grad["attn.wk"] = tokens.T @ dkeys
    grad["attn.wv"] = tokens.T @ dvalues
    return dq @ p["attn.wq"].T


def predict_noise(params, vocab, x, t, cond_ids, sched):
    """Forward pass without exposing the cache."""
    eps, _ = forward(params, vocab, x, t, cond_ids, sched)
    return eps


def backprop_noise(params, vocab, x, t, cond_ids, sched, upstream):
    """Exact reverse-mode gradient of <upstream, predict_noise(...)>."""
    _, cache = forward(params, vocab, x, t, cond_ids, sched)
    return backward(params, cache, upstream)


def model_predictor(params: ModelParams, vocab: ConceptVocabulary, sched):
    """Adapter with the shared predictor signature predict(x, t, cond_ids)."""

    def predict(x, t, cond_ids=()):
        return predict_noise(params, vocab, x, t, cond_ids, sched)

    return predict
