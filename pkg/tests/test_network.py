import numpy as np
import pytest

from eraselab.network import (
    ArchitectureConfig,
    ConceptVocabulary,
    ModelParams,
    backprop_noise,
    backward,
    embed_concepts,
    forward,
    init_params,
    make_vocab,
    model_predictor,
    predict_noise,
    select_group,
    time_embedding,
)
from eraselab.rng import RngStream
from eraselab.schedule import build_schedule

SCHED = build_schedule(100)


def small_setup(nonlinearity="silu", n_hidden=3, seed=7):
    arch = ArchitectureConfig(
        D=2, H=8, n_hidden=n_hidden, d_e=4, d_t=6, nonlinearity=nonlinearity
    )
    vocab = make_vocab(("a", "b", "c"), arch.d_e, RngStream(seed, 0))
    params = init_params(arch, RngStream(seed, 1))
    return arch, vocab, params


def randomize_output_proj(params, seed=11, scale=0.3):
    # wo starts at zero; give it mass so attention gradients are live
    gen = RngStream(seed, 5).generator()
    params.tensors["attn.wo"] = gen.uniform(
        -scale, scale, params.tensors["attn.wo"].shape
    )
    return params


class TestArchitectureConfig:
    def test_default_param_count_closed_form(self):
        arch = ArchitectureConfig()
        # 34*128+128 + 2*(128*128+128) + 128*2+2 + (128*16 + 16*16 + 16*16 + 16*128)
        assert arch.param_count() == 42370

    def test_param_count_matches_live_tensors(self):
        for nh in (1, 2, 3, 5):
            arch = ArchitectureConfig(D=3, H=10, n_hidden=nh, d_e=5, d_t=4)
            params = init_params(arch, RngStream(0, 0))
            live = sum(v.size for v in params.tensors.values())
            assert live == arch.param_count()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"d_t": 7},
            {"D": 0},
            {"H": -3},
            {"n_hidden": 0},
            {"d_e": 0},
            {"nonlinearity": "relu6"},
        ],
    )
    def test_rejects_bad_config(self, kwargs):
        with pytest.raises(ValueError):
            ArchitectureConfig(**kwargs)

    def test_attention_sits_mid_trunk(self):
        assert ArchitectureConfig(n_hidden=3).attn_after == 2
        assert ArchitectureConfig(n_hidden=1).attn_after == 1
        assert ArchitectureConfig(n_hidden=4).attn_after == 2


class TestVocabulary:
    def test_table_shape_and_scaling(self):
        vocab = make_vocab(("p", "q", "r"), 8, RngStream(1, 0))
        assert vocab.table.shape == (4, 8)
        gram = vocab.table @ vocab.table.T
        np.testing.assert_allclose(gram, 8.0 * np.eye(4), atol=1e-12)

    def test_deterministic_and_frozen(self):
        a = make_vocab(("p", "q"), 6, RngStream(4, 0))
        b = make_vocab(("p", "q"), 6, RngStream(4, 0))
        assert np.array_equal(a.table, b.table)
        assert not a.table.flags.writeable

    def test_too_many_concepts_for_dimension(self):
        with pytest.raises(ValueError, match="d_e"):
            make_vocab(tuple("abcdefgh"), 8, RngStream(0, 0))

    def test_duplicate_or_empty_names_rejected(self):
        with pytest.raises(ValueError):
            ConceptVocabulary(("a", "a"), np.zeros((3, 4)))
        with pytest.raises(ValueError):
            ConceptVocabulary(("a", ""), np.zeros((3, 4)))

    def test_row_count_must_include_empty_token(self):
        with pytest.raises(ValueError, match="rows"):
            ConceptVocabulary(("a", "b"), np.zeros((2, 4)))


class TestEmbedConcepts:
    def test_empty_sequence_maps_to_reserved_token(self):
        vocab = make_vocab(("a", "b"), 4, RngStream(2, 0))
        np.testing.assert_array_equal(embed_concepts(vocab, ()), vocab.table[:1])
        np.testing.assert_array_equal(embed_concepts(vocab, (0,)), vocab.table[:1])

    def test_concept_rows_selected_in_order(self):
        vocab = make_vocab(("a", "b", "c"), 4, RngStream(2, 0))
        seq = embed_concepts(vocab, (3, 1))
        np.testing.assert_array_equal(seq, vocab.table[[3, 1]])

    def test_empty_token_cannot_mix_with_concepts(self):
        vocab = make_vocab(("a", "b"), 4, RngStream(2, 0))
        with pytest.raises(ValueError, match="empty token"):
            embed_concepts(vocab, (0, 1))

    def test_out_of_range_id(self):
        vocab = make_vocab(("a", "b"), 4, RngStream(2, 0))
        with pytest.raises(ValueError, match="outside"):
            embed_concepts(vocab, (3,))


class TestTimeEmbedding:
    def test_zero_time_gives_sin_zero_cos_one(self):
        emb = time_embedding(0, 8, 100)
        np.testing.assert_array_equal(emb[:4], np.zeros(4))
        np.testing.assert_array_equal(emb[4:], np.ones(4))

    def test_frequency_band_endpoints(self):
        # slowest pair oscillates at 1/T, fastest at 1
        emb = time_embedding(50, 8, 100)
        assert emb[0] == pytest.approx(np.sin(0.5))
        assert emb[3] == pytest.approx(np.sin(50.0))

    def test_batched_shape(self):
        emb = time_embedding(np.array([0, 3, 99]), 12, 100)
        assert emb.shape == (3, 12)

    def test_all_timesteps_distinct(self):
        emb = time_embedding(np.arange(101), 32, 100)
        d2 = ((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1)
        np.fill_diagonal(d2, np.inf)
        assert np.sqrt(d2.min()) > 1e-3

    def test_rejects_odd_width_and_out_of_range(self):
        with pytest.raises(ValueError):
            time_embedding(3, 5, 100)
        with pytest.raises(ValueError):
            time_embedding(101, 8, 100)
        with pytest.raises(ValueError):
            time_embedding(-1, 8, 100)


class TestParams:
    def test_output_projection_starts_at_zero(self):
        _, _, params = small_setup()
        assert np.all(params.tensors["attn.wo"] == 0.0)

    def test_init_respects_fan_in_bounds(self):
        arch = ArchitectureConfig(D=2, H=16, n_hidden=2, d_e=4, d_t=8)
        params = init_params(arch, RngStream(5, 0))
        assert np.max(np.abs(params.tensors["trunk.w0"])) <= 1 / np.sqrt(10)
        assert np.max(np.abs(params.tensors["trunk.w1"])) <= 0.25
        assert np.max(np.abs(params.tensors["attn.wq"])) <= 0.25

    def test_group_partition(self):
        _, _, params = small_setup()
        cond = set(params.group_keys("conditioning"))
        trunk = set(params.group_keys("trunk"))
        assert cond == {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}
        assert cond | trunk == set(params.group_keys("all"))
        assert cond & trunk == set()

    def test_unknown_group_rejected(self):
        _, _, params = small_setup()
        with pytest.raises(ValueError, match="group"):
            params.group_keys("bias")

    def test_select_group_zeroes_complement(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        x = RngStream(5, 1).generator().standard_normal((3, 2))
        grad = backprop_noise(params, vocab, x, 20, (1,), SCHED, np.ones((3, 2)))
        cond = select_group(grad, params, "conditioning")
        trunk = select_group(grad, params, "trunk")
        assert np.all(cond["trunk.w0"] == 0.0)
        assert np.all(trunk["attn.wv"] == 0.0)
        for key in grad:
            np.testing.assert_array_equal(cond[key] + trunk[key], grad[key])

    def test_clone_is_independent(self):
        _, _, params = small_setup()
        other = params.clone()
        other.tensors["trunk.b0"][0] = 99.0
        assert params.tensors["trunk.b0"][0] != 99.0

    def test_key_mismatch_rejected(self):
        arch, _, params = small_setup()
        bad = dict(params.tensors)
        bad.pop("attn.wq")
        with pytest.raises(ValueError, match="missing"):
            ModelParams(arch, bad)

    def test_non_finite_tensor_rejected(self):
        arch, _, params = small_setup()
        bad = {k: v.copy() for k, v in params.tensors.items()}
        bad["trunk.w1"][0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            ModelParams(arch, bad)


class TestForward:
    def test_zero_weights_give_zero_output(self):
        arch, vocab, params = small_setup()
        zeros = {k: np.zeros_like(v) for k, v in params.tensors.items()}
        zp = ModelParams(arch, zeros)
        out = predict_noise(zp, vocab, np.ones((4, 2)), 10, (2,), SCHED)
        np.testing.assert_array_equal(out, np.zeros((4, 2)))

    def test_fresh_model_is_unconditional(self):
        _, vocab, params = small_setup()  # wo is zero at init
        x = RngStream(8, 0).generator().standard_normal((6, 2))
        base = predict_noise(params, vocab, x, 40, (), SCHED)
        for ids in [(1,), (2, 3), (1, 2, 3)]:
            np.testing.assert_array_equal(
                predict_noise(params, vocab, x, 40, ids, SCHED), base
            )

    def test_conditioning_changes_output_once_projection_is_live(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        x = RngStream(8, 1).generator().standard_normal((6, 2))
        a = predict_noise(params, vocab, x, 40, (), SCHED)
        b = predict_noise(params, vocab, x, 40, (2,), SCHED)
        assert np.max(np.abs(a - b)) > 1e-4

    def test_token_order_invariance(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        x = RngStream(8, 2).generator().standard_normal((5, 2))
        a = predict_noise(params, vocab, x, 15, (1, 2, 3), SCHED)
        b = predict_noise(params, vocab, x, 15, (3, 1, 2), SCHED)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_duplicated_empty_token_is_identity(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        x = RngStream(8, 3).generator().standard_normal((5, 2))
        a = predict_noise(params, vocab, x, 15, (0,), SCHED)
        b = predict_noise(params, vocab, x, 15, (0, 0), SCHED)
        np.testing.assert_allclose(a, b, atol=1e-14)

    def test_single_row_and_batch_agree(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        x = RngStream(8, 4).generator().standard_normal((3, 2))
        batch = predict_noise(params, vocab, x, 25, (1,), SCHED)
        for i in range(3):
            row = predict_noise(params, vocab, x[i], 25, (1,), SCHED)
            np.testing.assert_allclose(row, batch[i], atol=1e-15)
        assert row.shape == (2,)

    def test_per_row_timesteps(self):
        _, vocab, params = small_setup()
        x = RngStream(8, 5).generator().standard_normal((3, 2))
        batch = predict_noise(params, vocab, x, np.array([5, 50, 95]), (), SCHED)
        for i, t in enumerate([5, 50, 95]):
            np.testing.assert_allclose(
                predict_noise(params, vocab, x[i], t, (), SCHED), batch[i], atol=1e-15
            )

    def test_wrong_input_dimension(self):
        _, vocab, params = small_setup()
        with pytest.raises(ValueError, match="dimension"):
            predict_noise(params, vocab, np.ones((2, 5)), 10, (), SCHED)

    def test_divergent_values_raise(self):
        arch = ArchitectureConfig()
        vocab = make_vocab(("a",), arch.d_e, RngStream(50, 0))
        params = init_params(arch, RngStream(50, 1))
        with pytest.raises(FloatingPointError), np.errstate(invalid="ignore"):
            predict_noise(params, vocab, np.full((1, 2), np.inf), 10, (), SCHED)


def fd_gradient(params, vocab, x, t, ids, upstream, key, idx, h=1e-4):
    arr = params.tensors[key]
    orig = arr[idx]
    arr[idx] = orig + h
    ep = predict_noise(params, vocab, x, t, ids, SCHED)
    arr[idx] = orig - h
    em = predict_noise(params, vocab, x, t, ids, SCHED)
    arr[idx] = orig
    return float((upstream * (ep - em)).sum()) / (2 * h)


class TestBackward:
    def test_matches_finite_differences_everywhere_small_model(self):
        for nh in (1, 2, 3, 4):
            _, vocab, params = small_setup(n_hidden=nh, seed=13 + nh)
            randomize_output_proj(params, seed=20 + nh)
            gen = RngStream(21, nh).generator()
            x = gen.standard_normal((3, 2))
            upstream = gen.standard_normal((3, 2))
            t = np.array([5, 40, 77])
            grad = backprop_noise(params, vocab, x, t, (1, 3), SCHED, upstream)
            for key, arr in params.tensors.items():
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    fd = fd_gradient(params, vocab, x, t, (1, 3), upstream, key, idx)
                    got = grad[key][idx]
                    rel = abs(fd - got) / max(abs(fd), abs(got), 1e-10)
                    assert rel < 1e-5, (nh, key, idx, fd, got)

    def test_matches_finite_differences_default_arch_sampled(self):
        arch = ArchitectureConfig()
        vocab = make_vocab(("a", "b", "c", "d"), arch.d_e, RngStream(31, 0))
        params = init_params(arch, RngStream(31, 1))
        randomize_output_proj(params, seed=31, scale=0.1)
        gen = RngStream(31, 2).generator()
        x = gen.standard_normal((4, 2))
        upstream = gen.standard_normal((4, 2))
        grad = backprop_noise(params, vocab, x, 60, (2,), SCHED, upstream)
        keys = sorted(params.tensors)
        for _ in range(100):
            key = keys[gen.integers(len(keys))]
            flat = gen.integers(params.tensors[key].size)
            idx = np.unravel_index(flat, params.tensors[key].shape)
            fd = fd_gradient(params, vocab, x, 60, (2,), upstream, key, idx)
            got = grad[key][idx]
            rel = abs(fd - got) / max(abs(fd), abs(got), 1e-10)
            assert rel < 1e-5, (key, idx, fd, got)

    def test_gradient_is_additive_over_rows(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        gen = RngStream(33, 0).generator()
        x = gen.standard_normal((4, 2))
        upstream = gen.standard_normal((4, 2))
        whole = backprop_noise(params, vocab, x, 30, (2,), SCHED, upstream)
        parts = {k: np.zeros_like(v) for k, v in whole.items()}
        for i in range(4):
            g = backprop_noise(params, vocab, x[i], 30, (2,), SCHED, upstream[i])
            for k in parts:
                parts[k] += g[k]
        for k in whole:
            np.testing.assert_allclose(parts[k], whole[k], rtol=1e-12, atol=1e-12)

    def test_identity_single_layer_hand_derivation(self):
        arch = ArchitectureConfig(
            D=2, H=8, n_hidden=1, d_e=4, d_t=6, nonlinearity="identity"
        )
        vocab = make_vocab(("a", "b", "c"), 4, RngStream(9, 0))
        params = init_params(arch, RngStream(9, 1))
        params.tensors["attn.wo"] = (
            RngStream(9, 2).generator().uniform(-0.3, 0.3, (4, 8))
        )
        x = np.array([[0.4, -1.1]])
        upstream = np.array([[2.0, -3.0]])
        eps, cache = forward(params, vocab, x, 12, (2,), SCHED)
        grad = backward(params, cache, upstream)

        p = params.tensors
        inp = np.concatenate([x, time_embedding(np.array([12]), 6, 100)], axis=-1)
        # one token: softmax is 1, attention adds a constant vector
        const = (vocab.table[2:3] @ p["attn.wv"]) @ p["attn.wo"]
        h_attn = inp @ p["trunk.w0"] + p["trunk.b0"] + const
        np.testing.assert_array_equal(eps, h_attn @ p["trunk.w1"] + p["trunk.b1"])
        np.testing.assert_array_equal(grad["trunk.w1"], h_attn.T @ upstream)
        np.testing.assert_array_equal(grad["trunk.b1"], upstream[0])
        dh = upstream @ p["trunk.w1"].T
        np.testing.assert_array_equal(grad["trunk.w0"], inp.T @ dh)
        np.testing.assert_array_equal(grad["trunk.b0"], dh[0])
        np.testing.assert_array_equal(
            grad["attn.wo"], (vocab.table[2:3] @ p["attn.wv"]).T @ dh
        )
        # softmax over a single token is constant, so query/key paths are dead
        np.testing.assert_array_equal(grad["attn.wq"], np.zeros_like(p["attn.wq"]))
        np.testing.assert_array_equal(grad["attn.wk"], np.zeros_like(p["attn.wk"]))


class TestPredictorAdapter:
    def test_empty_and_reserved_id_agree(self):
        _, vocab, params = small_setup()
        randomize_output_proj(params)
        pred = model_predictor(params, vocab, SCHED)
        x = RngStream(40, 0).generator().standard_normal((4, 2))
        np.testing.assert_array_equal(pred(x, 30, ()), pred(x, 30, (0,)))

    def test_default_cond_is_unconditional(self):
        _, vocab, params = small_setup()
        pred = model_predictor(params, vocab, SCHED)
        x = np.zeros((2, 2))
        np.testing.assert_array_equal(pred(x, 10), pred(x, 10, ()))
