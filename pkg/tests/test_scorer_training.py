import math

import numpy as np
import pytest

from damr.kg import KnowledgeGraph
from damr.scorer import (
    AdamState,
    MiningConfig,
    PathScorer,
    ScorerConfig,
    TrainConfig,
    TrainTriplet,
    TrainingError,
    adam_step,
    backward,
    finetune_step,
    init_params,
    mine_triplets,
    pretrain,
    ranking_accuracy,
    score_batch,
)


def clone_tensors(params):
    return {name: t.copy() for name, t in params.tensors.items()}


def make_triplet(rng, dim=24, pos_len=2, neg_len=2):
    return TrainTriplet(
        question_vec=rng.normal(size=dim),
        pos_seq=[rng.normal(size=dim) for _ in range(pos_len)],
        neg_seq=[rng.normal(size=dim) for _ in range(neg_len)],
    )


class TestAdam:
    def test_zero_gradients_leave_params_unchanged(self, small_params):
        before = clone_tensors(small_params)
        state = AdamState.create(small_params)
        adam_step(small_params, small_params.zeros_like(), state, lr=0.1)
        for name in before:
            assert np.array_equal(small_params.tensors[name], before[name])

    def test_first_step_closed_form(self):
        # single scalar parameter, grad 1, lr 0.1: bias-corrected first step
        # moves by lr * 1 / (1 + eps)
        cfg = ScorerConfig(embed_dim=1, model_dim=1, num_layers=1, num_heads=1, max_path_len=1)
        params = init_params(cfg, seed=0)
        name = "head_w2"
        start = params.tensors[name].copy()
        grads = params.zeros_like()
        grads[name][:] = 1.0
        state = AdamState.create(params)
        adam_step(params, grads, state, lr=0.1)
        expected_delta = 0.1 * 1.0 / (1.0 + 1e-8)
        assert params.tensors[name][0, 0] == pytest.approx(start[0, 0] - expected_delta, abs=1e-15)

    def test_lr_zero_is_identity(self, small_params):
        rng = np.random.default_rng(0)
        before = clone_tensors(small_params)
        grads = {name: rng.normal(size=t.shape) for name, t in small_params.tensors.items()}
        adam_step(small_params, grads, AdamState.create(small_params), lr=0.0)
        for name in before:
            assert np.array_equal(small_params.tensors[name], before[name])

    def test_step_counter_increments(self, small_params):
        state = AdamState.create(small_params)
        adam_step(small_params, small_params.zeros_like(), state, lr=0.0)
        adam_step(small_params, small_params.zeros_like(), state, lr=0.0)
        assert state.step == 2


class TestMining:
    def sibling_kg(self):
        # topic A, gold A->B->C with answer C, sibling branch B->D, spare E
        return KnowledgeGraph.from_labeled_triples(
            [("A", "r1", "B"), ("B", "r2", "C"), ("B", "r9", "D")],
            extra_entities=["E"],
        )

    def test_sibling_branch_is_the_hard_negative(self, encoder):
        kg = self.sibling_kg()
        config = MiningConfig(max_hops=2, hard_per_positive=1, random_per_positive=0, seed=0)
        triplets = mine_triplets(
            kg, "q", [kg.entity_id("A")], [kg.entity_id("C")], encoder, config
        )
        assert len(triplets) == 1
        sibling = [encoder.embed_text("r1"), encoder.embed_text("r9")]
        assert len(triplets[0].neg_seq) == 2
        assert all(
            np.array_equal(a, b) for a, b in zip(triplets[0].neg_seq, sibling)
        )

    def test_unreachable_answers_give_empty_list(self, encoder):
        kg = self.sibling_kg()
        config = MiningConfig(max_hops=1, seed=0)  # C is two hops away
        got = mine_triplets(kg, "q", [kg.entity_id("A")], [kg.entity_id("C")], encoder, config)
        assert got == []

    def test_negatives_per_positive_counting(self, encoder):
        kg = KnowledgeGraph.from_labeled_triples(
            [("A", "g", "Z"), ("A", "d1", "P"), ("A", "d2", "Q"), ("P", "d3", "Q"), ("Q", "d4", "P")]
        )
        config = MiningConfig(max_hops=2, hard_per_positive=1, random_per_positive=1, seed=0)
        triplets = mine_triplets(kg, "q", [kg.entity_id("A")], [kg.entity_id("Z")], encoder, config)
        assert len(triplets) == 2  # one positive, two negatives

    def test_random_negatives_avoid_answers(self, encoder):
        kg = self.sibling_kg()
        config = MiningConfig(max_hops=2, hard_per_positive=0, random_per_positive=4, seed=1)
        triplets = mine_triplets(kg, "q", [kg.entity_id("A")], [kg.entity_id("C")], encoder, config)
        answer_vec = encoder.embed_text("r2")  # only path into C ends via r2 at position 2
        for tr in triplets:
            if len(tr.neg_seq) == 2:
                assert not np.array_equal(tr.neg_seq[1], answer_vec)

    def test_deterministic_under_seed(self, encoder):
        kg = self.sibling_kg()
        config = MiningConfig(max_hops=2, seed=5)
        a = mine_triplets(kg, "q", [kg.entity_id("A")], [kg.entity_id("C")], encoder, config)
        b = mine_triplets(kg, "q", [kg.entity_id("A")], [kg.entity_id("C")], encoder, config)
        assert len(a) == len(b)
        for ta, tb in zip(a, b):
            assert all(np.array_equal(x, y) for x, y in zip(ta.neg_seq, tb.neg_seq))


class TestPretrain:
    def test_zero_epochs_is_identity(self, small_params):
        rng = np.random.default_rng(1)
        before = clone_tensors(small_params)
        curve = pretrain(small_params, [make_triplet(rng)], TrainConfig(epochs=0))
        assert curve == []
        for name in before:
            assert np.array_equal(small_params.tensors[name], before[name])

    def test_same_seed_identical_curve(self, small_config):
        rng = np.random.default_rng(2)
        triplets = [make_triplet(rng) for _ in range(8)]
        curves = []
        for _ in range(2):
            params = init_params(small_config, seed=3)
            curves.append(pretrain(params, triplets, TrainConfig(epochs=3, seed=9)))
        assert curves[0] == curves[1]

    def test_loss_decreases_on_learnable_data(self, small_config):
        rng = np.random.default_rng(3)
        marker = rng.normal(size=24)
        triplets = [
            TrainTriplet(
                question_vec=rng.normal(size=24),
                pos_seq=[marker, rng.normal(size=24)],
                neg_seq=[rng.normal(size=24), rng.normal(size=24)],
            )
            for _ in range(24)
        ]
        params = init_params(small_config, seed=0)
        curve = pretrain(params, triplets, TrainConfig(epochs=8, lr=1e-3, batch_size=8))
        assert curve[-1] < curve[0]
        assert ranking_accuracy(params, triplets) >= 0.9

    def test_empty_triplets_rejected(self, small_params):
        with pytest.raises(TrainingError):
            pretrain(small_params, [], TrainConfig())


class TestFinetune:
    def test_margin_strictly_increases_over_repeated_steps(self, small_params):
        rng = np.random.default_rng(4)
        pair = make_triplet(rng, pos_len=2, neg_len=3)
        state = AdamState.create(small_params)
        margins = []
        for _ in range(50):
            s_pos = score_batch(small_params, pair.question_vec, [pair.pos_seq])[0]
            s_neg = score_batch(small_params, pair.question_vec, [pair.neg_seq])[0]
            margins.append(float(s_pos - s_neg))
            finetune_step(small_params, [pair], state, lr=1e-3)
        for earlier, later in zip(margins, margins[1:]):
            assert later > earlier

    def test_lr_zero_is_identity(self, small_params):
        rng = np.random.default_rng(5)
        before = clone_tensors(small_params)
        finetune_step(small_params, [make_triplet(rng)], AdamState.create(small_params), lr=0.0)
        for name in before:
            assert np.array_equal(small_params.tensors[name], before[name])

    def test_empty_pairs_rejected(self, small_params):
        with pytest.raises(ValueError):
            finetune_step(small_params, [], AdamState.create(small_params))


class TestEstimator:
    def test_get_params_round_trip(self):
        scorer = PathScorer(model_dim=32, num_heads=2)
        params = scorer.get_params()
        assert params["model_dim"] == 32
        clone = PathScorer(**params)
        assert clone.get_params() == params

    def test_fit_predict_shapes(self):
        rng = np.random.default_rng(6)
        triplets = [make_triplet(rng, dim=16) for _ in range(6)]
        scorer = PathScorer(
            embed_dim=16, model_dim=8, num_layers=1, num_heads=2, epochs=1, random_state=0
        ).fit(triplets)
        out = scorer.predict([(t.question_vec, t.pos_seq) for t in triplets[:3]])
        assert out.shape == (3,)
        assert len(scorer.loss_curve_) == 1

    def test_unfitted_raises(self):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            PathScorer().score_paths(np.zeros(4), [[np.zeros(4)]])

    def test_copy_isolates_finetuning(self):
        rng = np.random.default_rng(7)
        triplets = [make_triplet(rng, dim=16) for _ in range(4)]
        scorer = PathScorer(
            embed_dim=16, model_dim=8, num_layers=1, num_heads=2, epochs=1, random_state=0
        ).fit(triplets)
        twin = scorer.copy()
        twin.partial_fit(triplets, learning_rate=1e-2)
        name = "head_w2"
        assert not np.array_equal(twin.params_.tensors[name], scorer.params_.tensors[name])
