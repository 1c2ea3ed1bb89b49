"""Base-model fitting: config validation, determinism, loss behavior."""

from __future__ import annotations

import numpy as np
import pytest

from eraselab.data import make_mixture
from eraselab.network import ArchitectureConfig, make_vocab
from eraselab.optim import OptimConfig
from eraselab.rng import RngStream
from eraselab.schedule import build_schedule
from eraselab.training import TrainConfig, batch_loss_and_grad, train_base

SCHED = build_schedule(100)
ARCH = ArchitectureConfig()


def small_run(n_steps=0, seed=11, train_kw=None):
    data = make_mixture("four-corners", seed, 512)
    vocab = make_vocab(data.mixture.names, ARCH.d_e, RngStream(seed, 1))
    train = TrainConfig(n_steps=n_steps, **(train_kw or {}))
    result = train_base(data, vocab, ARCH, SCHED, OptimConfig(),
                        RngStream(seed, 2), train=train)
    return data, vocab, result


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(n_steps=-1)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(p_drop=1.0)
    with pytest.raises(ValueError):
        TrainConfig(p_drop=-0.1)
    TrainConfig(n_steps=0, p_drop=0.0)  # boundary values are legal


def test_zero_steps_returns_initialization():
    _, _, result = small_run(n_steps=0)
    assert result.losses.shape == (0,)
    assert result.params.tensors["attn.wo"].max() == 0.0  # untouched zero init


def test_vocabulary_size_must_match_mixture():
    data = make_mixture("four-corners", 0, 64)
    vocab = make_vocab(("a", "b"), ARCH.d_e, RngStream(0, 1))
    with pytest.raises(ValueError):
        train_base(data, vocab, ARCH, SCHED, OptimConfig(), RngStream(0, 2))


def test_training_is_deterministic():
    _, _, a = small_run(n_steps=40)
    _, _, b = small_run(n_steps=40)
    np.testing.assert_array_equal(a.losses, b.losses)
    for key in a.params.tensors:
        np.testing.assert_array_equal(a.params.tensors[key], b.params.tensors[key])


def test_seed_changes_the_run():
    _, _, a = small_run(n_steps=40, seed=1)
    _, _, b = small_run(n_steps=40, seed=2)
    assert not np.array_equal(a.losses, b.losses)


def test_loss_trends_down_on_short_run():
    _, _, result = small_run(n_steps=600)
    head = result.losses[:100].mean()
    tail = result.losses[-100:].mean()
    assert tail < 0.7 * head


def test_batch_loss_matches_mean_squared_residual():
    data, vocab, result = small_run(n_steps=50)
    gen = RngStream(3, 0).generator()
    x_t = gen.standard_normal((8, ARCH.D))
    t = gen.integers(1, SCHED.T + 1, 8)
    ids = gen.integers(0, vocab.K + 1, 8)
    target = gen.standard_normal((8, ARCH.D))
    loss, grads = batch_loss_and_grad(result.params, vocab, x_t, t, ids, target, SCHED)
    from eraselab.network import forward

    residuals = np.stack([
        forward(result.params, vocab, x_t[i], int(t[i]),
                (int(ids[i]),) if ids[i] else (), SCHED)[0] - target[i]
        for i in range(8)
    ])
    assert loss == pytest.approx(float((residuals**2).mean()), rel=1e-12)
    assert set(grads) == set(result.params.tensors)


def test_gradient_matches_finite_differences_through_training_loss():
    data, vocab, result = small_run(n_steps=20)
    gen = RngStream(7, 0).generator()
    x_t = gen.standard_normal((4, ARCH.D))
    t = np.array([5, 40, 80, 100])
    ids = np.array([0, 1, 2, 3])
    target = gen.standard_normal((4, ARCH.D))

    def loss_at(params):
        return batch_loss_and_grad(params, vocab, x_t, t, ids, target, SCHED)[0]

    _, grads = batch_loss_and_grad(result.params, vocab, x_t, t, ids, target, SCHED)
    h = 1e-6
    for key in ("trunk.w0", "attn.wv", "attn.wo", "trunk.b2"):
        flat = result.params.tensors[key]
        idx = tuple(gen.integers(0, s) for s in flat.shape)
        bumped = result.params.clone()
        bumped.tensors[key][idx] += h
        dipped = result.params.clone()
        dipped.tensors[key][idx] -= h
        fd = (loss_at(bumped) - loss_at(dipped)) / (2 * h)
        assert grads[key][idx] == pytest.approx(fd, rel=1e-5, abs=1e-10)
