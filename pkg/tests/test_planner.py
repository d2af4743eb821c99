import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from damr.embed import CachedEmbedder, StubEmbedder
from damr.planner import (
    ChatClient,
    LlmPlanner,
    MockPlanner,
    PlannerError,
    PlannerQuery,
    SimilarityPlanner,
    UsageCounter,
    approx_tokens,
    build_prompt,
    parse_response,
    rank_by_similarity,
)

FIG_CANDIDATES = (
    (0, "government.president"),
    (1, "government.president.successor"),
    (2, "location.location.containedby"),
    (3, "people.person.place_of_birth"),
)


def make_query(labels, k=2, question="q?", path=()):
    return PlannerQuery(
        question=question,
        current_path=tuple(path),
        candidates=tuple((i, lab) for i, lab in enumerate(labels)),
        k=k,
    )


class TestPrompt:
    def test_worked_example_candidates_rendered_verbatim(self):
        query = PlannerQuery(
            question="who was the president after jfk died",
            current_path=(),
            candidates=FIG_CANDIDATES,
            k=2,
        )
        prompt = build_prompt(query)
        assert (
            '{"government.president", "government.president.successor", '
            '"location.location.containedby", "people.person.place_of_birth"}'
        ) in prompt
        assert "who was the president after jfk died" in prompt
        assert "K: 2" in prompt

    def test_k_rendered(self):
        prompt = build_prompt(make_query(["only.relation"], k=1))
        assert "K: 1" in prompt

    def test_quote_character_preserved(self):
        prompt = build_prompt(make_query(['rel"quoted']))
        assert 'rel"quoted' in prompt


class TestParse:
    def test_worked_example_output(self):
        query = PlannerQuery("q", (), FIG_CANDIDATES, 2)
        raw = '["government.president", "government.president.successor"]'
        assert parse_response(raw, query) == [0, 1]

    def test_hallucinated_relation_dropped(self):
        query = make_query(["real.one", "real.two"], k=2)
        raw = 'Sure: ["made.up", "real.two"]'
        assert parse_response(raw, query) == [1]

    def test_free_text_fails(self):
        query = make_query(["a", "b"], k=1)
        assert parse_response("I think the answer is a", query) == []

    def test_truncates_to_k_and_dedupes(self):
        query = make_query(["a", "b", "c"], k=2)
        assert parse_response('["b", "b", "c", "a"]', query) == [1, 2]

    def test_whitespace_trimmed(self):
        query = make_query(["a.b"], k=1)
        assert parse_response('[" a.b "]', query) == [0]

    def test_skips_empty_bracket_pairs(self):
        query = make_query(["a"], k=1)
        assert parse_response('items [] then ["a"]', query) == [0]

    @given(st.binary(max_size=200))
    @settings(max_examples=200, deadline=None)
    def test_total_on_arbitrary_bytes(self, blob):
        query = make_query(["x", "y"], k=1)
        raw = blob.decode("utf-8", errors="replace")
        result = parse_response(raw, query)
        assert isinstance(result, list)
        assert all(r in (0, 1) for r in result)


class TestContract:
    def test_no_pruning_needed(self, encoder):
        for planner in (SimilarityPlanner(encoder), MockPlanner()):
            query = make_query(["a", "b"], k=3)
            choice = planner.select_relations(query)
            assert choice.ranked == (0, 1)
            assert choice.source == planner.kind
            assert planner.usage.snapshot().llm_calls == 0

    @given(
        st.lists(st.text(alphabet="abcdef.", min_size=1, max_size=8), min_size=1, max_size=12, unique=True),
        st.integers(min_value=1, max_value=6),
        st.integers(min_value=0, max_value=2**32 - 1),
    )
    @settings(max_examples=60, deadline=None)
    def test_choice_invariants(self, labels, k, seed):
        planner = MockPlanner({"q?": [[labels[0]]]}, seed=seed)
        choice = planner.select_relations(make_query(labels, k=k))
        assert len(choice.ranked) <= k
        assert len(set(choice.ranked)) == len(choice.ranked)
        assert set(choice.ranked) <= set(range(len(labels)))

    def test_validation(self):
        with pytest.raises(ValueError):
            PlannerQuery("q", (), (), 1).validate()
        with pytest.raises(ValueError):
            PlannerQuery("q", (), ((0, "a"),), 0).validate()
        with pytest.raises(ValueError):
            PlannerQuery("q", (), ((0, "a"), (0, "b")), 1).validate()


class TestSimilarity:
    def test_matches_direct_cosine(self, encoder):
        labels = ["relation.x", "relation.y"]
        planner = SimilarityPlanner(encoder)
        query = make_query(labels, k=1, question="which relation?")
        choice = planner.select_relations(query)
        qv = encoder.embed_text("which relation?")
        cosines = [
            float(np.dot(qv, encoder.embed_text(lab)))
            / (np.linalg.norm(qv) * np.linalg.norm(encoder.embed_text(lab)))
            for lab in labels
        ]
        assert choice.ranked == (int(np.argmax(cosines)),)
        assert choice.source == "similarity"

    def test_records_one_call_when_pruning(self, encoder):
        planner = SimilarityPlanner(encoder)
        planner.select_relations(make_query(["a", "b", "c"], k=1))
        snap = planner.usage.snapshot()
        assert snap.llm_calls == 1
        assert snap.prompt_tokens > 0


class TestMock:
    def test_gold_ranked_first_among_ten(self):
        labels = [f"noise.{i}" for i in range(9)] + ["gold.rel"]
        planner = MockPlanner({"q?": [["gold.rel"]]})
        choice = planner.select_relations(make_query(labels, k=3))
        assert choice.ranked[0] == labels.index("gold.rel")

    def test_prefix_matching_picks_next_hop(self):
        planner = MockPlanner({"q?": [["first", "second"]]})
        labels = ["second", "zz", "aa", "first"]
        choice = planner.select_relations(make_query(labels, k=1, path=("first",)))
        assert choice.ranked == (labels.index("second"),)

    def test_demotion_puts_gold_last(self):
        labels = ["gold.rel"] + [f"noise.{i}" for i in range(4)]
        planner = MockPlanner({"q?": [["gold.rel"]]}, demote_prob=1.0, seed=0)
        choice = planner.select_relations(make_query(labels, k=4))
        assert labels.index("gold.rel") not in choice.ranked

    def test_same_seed_same_output(self):
        labels = [f"r{i}" for i in range(8)]
        for seed in (0, 1, 2):
            a = MockPlanner({"q?": [["r3"]]}, demote_prob=0.5, seed=seed)
            b = MockPlanner({"q?": [["r3"]]}, demote_prob=0.5, seed=seed)
            q = make_query(labels, k=2)
            assert a.select_relations(q) == b.select_relations(q)


class FakeChatClient:
    def __init__(self, replies, usage=(None, None), fail=False):
        self.replies = list(replies)
        self.usage = usage
        self.fail = fail
        self.prompts = []

    def complete(self, prompt):
        self.prompts.append(prompt)
        if self.fail:
            raise PlannerError("remote down")
        return self.replies.pop(0), self.usage[0], self.usage[1]


class TestLlm:
    def test_ranked_from_response_and_usage_from_server(self, encoder):
        client = FakeChatClient(['["b", "a"]'], usage=(100, 7))
        planner = LlmPlanner(client, encoder)
        choice = planner.select_relations(make_query(["a", "b", "c"], k=2))
        assert choice.ranked == (1, 0)
        assert choice.source == "llm"
        snap = planner.usage.snapshot()
        assert (snap.llm_calls, snap.prompt_tokens, snap.completion_tokens) == (1, 100, 7)

    def test_heuristic_tokens_when_usage_missing(self, encoder):
        client = FakeChatClient(['["a"]'])
        planner = LlmPlanner(client, encoder)
        planner.select_relations(make_query(["a", "b", "c"], k=1))
        snap = planner.usage.snapshot()
        assert snap.prompt_tokens == approx_tokens(client.prompts[0])
        assert snap.completion_tokens == approx_tokens('["a"]')

    def test_unusable_response_falls_back(self, encoder):
        client = FakeChatClient(["no list here"])
        planner = LlmPlanner(client, encoder)
        choice = planner.select_relations(make_query(["a", "b", "c"], k=1))
        assert choice.source == "fallback"
        assert len(choice.ranked) == 1

    def test_transport_failure_falls_back(self, encoder):
        planner = LlmPlanner(FakeChatClient([], fail=True), encoder)
        choice = planner.select_relations(make_query(["a", "b", "c"], k=2))
        assert choice.source == "fallback"

    def test_no_fallback_raises(self, encoder):
        planner = LlmPlanner(FakeChatClient([], fail=True), encoder, fallback=False)
        with pytest.raises(PlannerError):
            planner.select_relations(make_query(["a", "b", "c"], k=1))

    def test_oversize_candidate_list_truncated(self, encoder):
        labels = [f"rel.{i:03d}" for i in range(60)]
        client = FakeChatClient([f'["{labels[0]}"]'])
        planner = LlmPlanner(client, encoder, max_candidates=50)
        planner.select_relations(make_query(labels, k=1))
        sent = client.prompts[0]
        rendered = sent.count('"rel.')
        assert rendered == 50


class TestUsageCounter:
    def test_monotone_and_snapshot_diff(self):
        counter = UsageCounter()
        counter.record(1, 10, 2)
        before = counter.snapshot()
        counter.record(2, 5, 5)
        after = counter.snapshot()
        delta = after - before
        assert (delta.llm_calls, delta.prompt_tokens, delta.completion_tokens) == (2, 5, 5)
        assert after.total_tokens == 22

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            UsageCounter().record(-1)
