import math

import numpy as np
import pytest

from damr.scorer import (
    ScorerConfig,
    TrainTriplet,
    backward,
    bpr_loss,
    init_params,
    score,
    score_batch,
    tensor_shapes,
)


def random_paths(rng, dim, lengths):
    return [[rng.normal(size=dim) for _ in range(n)] for n in lengths]


class TestConfig:
    def test_ff_default_is_four_times_model_dim(self):
        assert ScorerConfig(model_dim=32).ff_dim == 128

    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            ScorerConfig(model_dim=30, num_heads=4)

    def test_round_trip(self):
        cfg = ScorerConfig(embed_dim=12, model_dim=8, num_heads=2, max_path_len=3)
        assert ScorerConfig.from_dict(cfg.to_dict()) == cfg


class TestInit:
    def test_deterministic(self, small_config):
        a = init_params(small_config, seed=3)
        b = init_params(small_config, seed=3)
        for name in a.tensors:
            assert a.tensors[name].tobytes() == b.tensors[name].tobytes()

    def test_layer_norm_gains_ones_biases_zeros(self, small_params):
        for name, tensor in small_params.tensors.items():
            if name.endswith("_gain"):
                assert np.all(tensor == 1.0)
            if name.endswith("_bias"):
                assert np.all(tensor == 0.0)

    def test_weights_within_bound(self, small_config, small_params):
        for name, shape in tensor_shapes(small_config).items():
            if name.endswith(("_gain", "_bias")):
                continue
            bound = math.sqrt(6.0 / (shape[0] + shape[-1]))
            assert np.abs(small_params.tensors[name]).max() <= bound


class TestScore:
    def test_pool_weights_normalized_and_score_finite(self, small_params):
        rng = np.random.default_rng(0)
        for length in (1, 2, 5):
            enc = score(small_params, rng.normal(size=24), random_paths(rng, 24, [length])[0])
            assert np.all(enc.pool_weights >= 0)
            assert abs(enc.pool_weights.sum() - 1.0) <= 1e-9
            assert math.isfinite(enc.score)

    def test_single_key_cross_attention_adds_exact_value(self, small_params):
        rng = np.random.default_rng(1)
        q = rng.normal(size=24)
        enc = score(small_params, q, random_paths(rng, 24, [3])[0])
        # softmax over the single question key is exactly 1, so the attended
        # states are bitwise states + (projected question @ value map)
        injected = (q @ small_params.tensors["input_proj"]) @ small_params.tensors["cross_value"]
        assert np.array_equal(enc.attended, enc.states + injected[None, :])

    def test_permutation_invariance_with_flat_positions_and_constant_pooling(self, small_params):
        params = small_params
        params.tensors["pos_table"][:] = params.tensors["pos_table"][0]
        params.tensors["pool_w2"][:] = 0.0
        rng = np.random.default_rng(2)
        q = rng.normal(size=24)
        path = random_paths(rng, 24, [3])[0]
        forward = score(params, q, path).score
        reversed_ = score(params, q, list(reversed(path))).score
        assert abs(forward - reversed_) <= 1e-9

    def test_empty_path_rejected(self, small_params):
        with pytest.raises(ValueError):
            score(small_params, np.zeros(24), [])

    def test_overlong_path_rejected(self, small_params):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            score(small_params, rng.normal(size=24), random_paths(rng, 24, [6])[0])

    def test_non_finite_input_rejected(self, small_params):
        bad = np.zeros(24)
        bad[0] = np.nan
        with pytest.raises(ValueError):
            score(small_params, bad, [np.ones(24)])

    def test_wrong_dimension_rejected(self, small_params):
        with pytest.raises(ValueError):
            score(small_params, np.zeros(24), [np.zeros(7)])


class TestScoreBatch:
    def test_batch_of_one_equals_score(self, small_params):
        rng = np.random.default_rng(4)
        q = rng.normal(size=24)
        path = random_paths(rng, 24, [2])[0]
        assert abs(score_batch(small_params, q, [path])[0] - score(small_params, q, path).score) <= 1e-12

    def test_mixed_lengths_match_individual(self, small_params):
        rng = np.random.default_rng(5)
        q = rng.normal(size=24)
        paths = random_paths(rng, 24, [1, 3])
        batched = score_batch(small_params, q, paths)
        singles = [score(small_params, q, p).score for p in paths]
        assert np.abs(batched - singles).max() <= 1e-9

    def test_empty_batch(self, small_params):
        assert score_batch(small_params, np.zeros(24), []).shape == (0,)

    def test_padding_invariance_property(self, small_params):
        rng = np.random.default_rng(6)
        for _ in range(100):
            q = rng.normal(size=24)
            lengths = rng.integers(1, 6, size=rng.integers(1, 8))
            paths = random_paths(rng, 24, lengths)
            batched = score_batch(small_params, q, paths)
            singles = np.array([score(small_params, q, p).score for p in paths])
            assert np.abs(batched - singles).max() <= 1e-9


class TestRankingLoss:
    def test_equal_scores_give_ln2(self):
        assert bpr_loss(1.7, 1.7) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_large_positive_margin(self):
        # -log sigmoid(10), evaluated independently at high precision
        assert bpr_loss(10.0, 0.0) == pytest.approx(4.539889921686465e-05, rel=1e-9)

    def test_large_negative_margin(self):
        assert bpr_loss(0.0, 10.0) == pytest.approx(10.000045398899218, rel=1e-12)

    def test_batch_mean(self):
        assert bpr_loss(np.array([0.0, 10.0]), np.array([0.0, 0.0])) == pytest.approx(
            (math.log(2.0) + 4.539889921686465e-05) / 2.0, rel=1e-12
        )

    def test_always_positive(self):
        rng = np.random.default_rng(7)
        margins = rng.normal(scale=20, size=200)
        for m in margins:
            assert bpr_loss(m, 0.0) > 0.0


def make_triplet(rng, dim, pos_len, neg_len):
    return TrainTriplet(
        question_vec=rng.normal(size=dim),
        pos_seq=[rng.normal(size=dim) for _ in range(pos_len)],
        neg_seq=[rng.normal(size=dim) for _ in range(neg_len)],
    )


class TestBackward:
    def test_identical_sequences_give_ln2_and_vanishing_grads(self, small_params):
        rng = np.random.default_rng(8)
        q = rng.normal(size=24)
        seq = [rng.normal(size=24) for _ in range(2)]
        loss, grads = backward(
            small_params, [TrainTriplet(question_vec=q, pos_seq=seq, neg_seq=list(seq))]
        )
        assert loss == math.log(2.0)  # margin is identically zero
        # Per-row gradient contributions are exact negations; what survives is
        # only the sub-ulp FMA residue of cancelling products inside matmul.
        for name, grad in grads.items():
            assert np.abs(grad).max() <= 1e-15, name

    def test_untouched_positional_rows_get_zero_gradient(self, small_params):
        rng = np.random.default_rng(9)
        _, grads = backward(small_params, [make_triplet(rng, 24, 2, 2)])
        assert np.all(grads["pos_table"][2:] == 0.0)
        assert np.any(grads["pos_table"][:2] != 0.0)

    def test_union_batch_is_mean_of_subbatches(self, small_params):
        rng = np.random.default_rng(10)
        a = [make_triplet(rng, 24, 2, 1) for _ in range(2)]
        b = [make_triplet(rng, 24, 3, 2) for _ in range(3)]
        _, grads_a = backward(small_params, a)
        _, grads_b = backward(small_params, b)
        _, grads_union = backward(small_params, a + b)
        weight_a, weight_b = len(a) / (len(a) + len(b)), len(b) / (len(a) + len(b))
        for name in grads_union:
            blended = weight_a * grads_a[name] + weight_b * grads_b[name]
            assert np.abs(grads_union[name] - blended).max() <= 1e-10

    def test_gradients_match_finite_differences(self, small_params):
        rng = np.random.default_rng(11)
        batch = [make_triplet(rng, 24, int(l), int(m)) for l, m in rng.integers(1, 5, size=(3, 2))]
        loss, grads = backward(small_params, batch)
        delta = 1e-5
        names = list(small_params.tensors)
        worst = 0.0
        for _ in range(120):
            name = names[rng.integers(len(names))]
            tensor = small_params.tensors[name]
            idx = tuple(rng.integers(s) for s in tensor.shape)
            original = tensor[idx]
            tensor[idx] = original + delta
            up, _ = backward(small_params, batch)
            tensor[idx] = original - delta
            down, _ = backward(small_params, batch)
            tensor[idx] = original
            fd = (up - down) / (2 * delta)
            rel = abs(grads[name][idx] - fd) / max(abs(grads[name][idx]), abs(fd), 1e-6)
            worst = max(worst, rel)
        assert worst <= 1e-4

    def test_empty_batch_rejected(self, small_params):
        with pytest.raises(ValueError):
            backward(small_params, [])
