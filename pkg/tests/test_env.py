"""Environment dynamics: event probabilities, legality, rewards, transitions."""

import math

import numpy as np
import pytest

from matchmix import (
    ENQUEUE,
    TRASH,
    ConfigError,
    Event,
    IllegalActionError,
    ModelConfig,
    State,
    StateSpaceError,
    build_scenario,
    config_to_document,
    document_to_config,
    enumerate_states,
    event_distribution,
    initial_distribution,
    legal_actions,
    match_action,
    reward,
    step,
    transition_support,
)
from matchmix.env import ARRIVAL, DEPARTURE, NO_EVENT, RELOCATION, next_queues

DIAMOND = build_scenario("diamond")
ORGAN_B = build_scenario("organ_b")


def arrival(i):
    return Event(ARRIVAL, i)


def make_config(**overrides):
    base = dict(
        name="tiny",
        class_count=2,
        capacity=1,
        arrival_rates=(0.3, 0.2),
        departure_rates=(0.1, 0.2),
        relocation_rates=(0.0, 0.0),
        next_node=(None, None),
        edges=((0, 1, 1.0),),
        departure_costs=(1.0, 2.0),
        relocation_costs=(0.0, 0.0),
        discount=0.8,
    )
    base.update(overrides)
    return ModelConfig(**base)


class TestScenarios:
    def test_diamond_high_edge(self):
        # paper labels nodes 1..4; classes here are 0-based, so (2,4) -> (1,3)
        assert DIAMOND.match_reward[(1, 3)] == 200.0

    def test_diamond_total_rate(self):
        assert DIAMOND.total_rate == pytest.approx(0.55, abs=1e-12)

    def test_organ_b_high_urgency_reward(self):
        high_recipients = [4, 7, 10, 13]
        for r in high_recipients:
            donors = [i for i in range(4) if (min(i, r), max(i, r)) in {(e[0], e[1]) for e in ORGAN_B.edges}]
            assert donors, f"high-urgency class {r} has no donors"
            for d in donors:
                assert ORGAN_B.match_reward[(d, r)] == 1000.0

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            build_scenario("hexagon")

    def test_invalid_documents_name_the_field(self):
        doc = config_to_document(DIAMOND)
        bad = dict(doc, discount=1.2)
        with pytest.raises(ConfigError, match="discount"):
            document_to_config(bad)
        bad = dict(doc, edges=[[0, 9, 1.0]])
        with pytest.raises(ConfigError, match="edges"):
            document_to_config(bad)
        bad = dict(doc, arrival_rates=[0.1])
        with pytest.raises(ConfigError, match="arrival_rates"):
            document_to_config(bad)

    def test_relocation_requires_next_node(self):
        with pytest.raises(ConfigError, match="next_node"):
            make_config(relocation_rates=(0.1, 0.0))

    def test_round_trip(self):
        for name in ("diamond", "organ_a", "organ_b"):
            cfg = build_scenario(name)
            assert document_to_config(config_to_document(cfg)) == cfg


class TestEventDistribution:
    def test_diamond_arrival_probability(self):
        dist = event_distribution(DIAMOND, (0, 0, 0, 0))
        assert dist[arrival(1)] == pytest.approx(9 / 22, abs=1e-12)

    def test_diamond_no_event_is_impossible(self):
        # all mu = nu = 0, so Lambda equals the total arrival rate
        for queues in [(0, 0, 0, 0), (5, 5, 5, 5), (1, 2, 3, 4)]:
            dist = event_distribution(DIAMOND, queues)
            assert Event(NO_EVENT, -1) not in dist
            assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)

    def test_empty_queues_have_no_departures(self):
        cfg = make_config()
        dist = event_distribution(cfg, (0, 0))
        assert all(ev.kind == ARRIVAL or ev.kind == NO_EVENT for ev in dist)

    def test_sums_to_one_and_nonnegative(self):
        rng = np.random.default_rng(7)
        cfg = ORGAN_B
        for _ in range(50):
            queues = tuple(int(v) for v in rng.integers(0, cfg.capacity + 1, cfg.class_count))
            dist = event_distribution(cfg, queues)
            assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)
            assert all(p >= 0.0 for p in dist.values())


class TestLegalActions:
    def test_no_compatible_items(self):
        state = State((0, 0, 0, 0), arrival(0))
        assert legal_actions(DIAMOND, state) == [ENQUEUE]

    def test_all_neighbors_available(self):
        state = State((2, 0, 1, 1), arrival(1))
        acts = legal_actions(DIAMOND, state)
        assert set(acts) == {match_action(1, 0), match_action(1, 2), match_action(1, 3), ENQUEUE}

    def test_full_queue_forces_trash(self):
        state = State((5, 0, 0, 0), arrival(0))
        assert legal_actions(DIAMOND, state) == [TRASH]

    def test_departure_is_forced_noop(self):
        cfg = make_config()
        state = State((1, 1), Event(DEPARTURE, 0))
        assert legal_actions(cfg, state) == [ENQUEUE]


class TestReward:
    def test_match_pays_the_edge(self):
        state = State((2, 0, 1, 1), arrival(1))
        assert reward(DIAMOND, state, match_action(1, 3)) == 200.0

    def test_relocation_cost_medium_node(self):
        # class 5 is a medium-urgency recipient; relocation from it costs 10
        queues = [0] * 16
        queues[5] = 1
        state = State(tuple(queues), Event(RELOCATION, 5))
        assert reward(ORGAN_B, state, ENQUEUE) == -10.0

    def test_no_event_enqueue_is_free(self):
        state = State((1, 1, 0, 0), Event(NO_EVENT, -1))
        assert reward(DIAMOND, state, ENQUEUE) == 0.0

    def test_illegal_action_raises(self):
        state = State((0, 0, 0, 0), arrival(0))
        with pytest.raises(IllegalActionError):
            reward(DIAMOND, state, match_action(0, 1))

    def test_diamond_rewards_bounded(self):
        lo, hi = DIAMOND.reward_bounds
        assert (lo, hi) == (0.0, 200.0)
        for state in enumerate_states(DIAMOND, cap=10**7):
            for a in legal_actions(DIAMOND, state):
                assert 0.0 <= reward(DIAMOND, state, a) <= 200.0


class TestTransitions:
    def test_enqueue_after_arrival(self):
        state = State((0, 0, 0, 0), arrival(1))
        support = transition_support(DIAMOND, state, ENQUEUE)
        assert all(s.queues == (0, 1, 0, 0) for s, _ in support)
        probs = {s.event.cls: p for s, p in support}
        for j in range(4):
            assert probs[j] == pytest.approx(DIAMOND.arrival_rates[j] / 0.55, abs=1e-12)

    def test_match_net_delta(self):
        state = State((2, 0, 1, 1), arrival(1))
        support = transition_support(DIAMOND, state, match_action(1, 3))
        assert all(s.queues == (2, 0, 1, 0) for s, _ in support)

    def test_no_event_keeps_queues(self):
        state = State((1, 2, 0, 0), Event(NO_EVENT, -1))
        support = transition_support(DIAMOND, state, ENQUEUE)
        assert all(s.queues == (1, 2, 0, 0) for s, _ in support)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(3)
        for cfg in (DIAMOND, ORGAN_B):
            for _ in range(30):
                queues = tuple(int(v) for v in rng.integers(0, cfg.capacity + 1, cfg.class_count))
                dist = event_distribution(cfg, queues)
                events = list(dist)
                state = State(queues, events[int(rng.integers(len(events)))])
                for a in legal_actions(cfg, state):
                    support = transition_support(cfg, state, a)
                    assert sum(p for _, p in support) == pytest.approx(1.0, abs=1e-12)
                    for s2, _ in support:
                        assert all(0 <= v <= cfg.capacity for v in s2.queues)

    def test_trash_at_full_queue_never_overflows(self):
        state = State((5, 0, 0, 0), arrival(0))
        assert next_queues(DIAMOND, state, TRASH) == (5, 0, 0, 0)


class TestStep:
    def test_deterministic_under_seed(self):
        state = State((2, 0, 1, 1), arrival(1))
        a = match_action(1, 3)
        out1 = [step(DIAMOND, state, a, np.random.default_rng(11)) for _ in range(5)]
        out2 = [step(DIAMOND, state, a, np.random.default_rng(11)) for _ in range(5)]
        assert out1 == out2

    def test_reward_component_is_deterministic(self):
        rng = np.random.default_rng(5)
        state = State((2, 0, 1, 1), arrival(1))
        for a in legal_actions(DIAMOND, state):
            expected = reward(DIAMOND, state, a)
            for _ in range(10):
                _, r = step(DIAMOND, state, a, rng)
                assert r == expected

    def test_empirical_frequencies_match_support(self):
        n = 10**5
        rng = np.random.default_rng(42)
        state = State((0, 0, 0, 0), arrival(1))
        support = dict(transition_support(DIAMOND, state, ENQUEUE))
        counts = {}
        for _ in range(n):
            s2, _ = step(DIAMOND, state, ENQUEUE, rng)
            counts[s2] = counts.get(s2, 0) + 1
        assert set(counts) <= set(support)
        for s2, p in support.items():
            freq = counts.get(s2, 0) / n
            sigma = math.sqrt(p * (1 - p) / n)
            assert abs(freq - p) <= 3 * sigma


class TestInitialDistribution:
    def test_diamond_weights(self):
        dist = initial_distribution(DIAMOND)
        empty = (0, 0, 0, 0)
        assert dist[State(empty, arrival(1))] == pytest.approx(0.225 / 0.55, abs=1e-12)
        assert all(s.queues == empty for s in dist)
        assert sum(dist.values()) == pytest.approx(1.0, abs=1e-12)

    def test_single_class_dirac(self):
        cfg = ModelConfig(
            name="single",
            class_count=1,
            capacity=1,
            arrival_rates=(0.7,),
            departure_rates=(0.0,),
            relocation_rates=(0.0,),
            next_node=(None,),
            edges=(),
            departure_costs=(0.0,),
            relocation_costs=(0.0,),
            discount=0.5,
        )
        dist = initial_distribution(cfg)
        assert dist == {State((0,), arrival(0)): 1.0}


class TestEnumeration:
    def test_diamond_counts(self):
        states = enumerate_states(DIAMOND)
        queue_vectors = {s.queues for s in states}
        assert len(queue_vectors) == 1296  # (5+1)^4
        assert len(states) == 1296 * 4  # four arrival events, no-event pruned

    def test_tiny_chain(self):
        cfg = ModelConfig(
            name="single",
            class_count=1,
            capacity=1,
            arrival_rates=(0.7,),
            departure_rates=(0.0,),
            relocation_rates=(0.0,),
            next_node=(None,),
            edges=(),
            departure_costs=(0.0,),
            relocation_costs=(0.0,),
            discount=0.5,
        )
        states = enumerate_states(cfg)
        assert len(states) == 2  # two queue vectors, one arrival event each

    def test_cap_errors_with_count(self):
        with pytest.raises(StateSpaceError, match=r"\d+"):
            enumerate_states(ORGAN_B, cap=10**6)
