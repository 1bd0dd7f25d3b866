"""Potential functions, weight updates, advantage accumulation, sampling."""

import math

import numpy as np
import pytest

from matchmix import (
    CumulativeAdvantage,
    Event,
    PotentialSpec,
    State,
    WeightTable,
    accumulate_advantage,
    build_scenario,
    default_poly_degree,
    default_roster,
    legal_actions,
    potential_value,
    sample_and_act,
    update_weights,
    weights_from_cumulative,
)
from matchmix.env import ARRIVAL
from matchmix.orchestrator import KEY_STATE, varying_rate

DIAMOND = build_scenario("diamond")
ROSTER = default_roster("diamond")


class TestPotentialValue:
    def test_polynomial(self):
        spec = PotentialSpec.polynomial(2)
        assert potential_value(spec, 1, 3.0) == 9.0
        assert potential_value(spec, 1, -1.0) == 0.0

    def test_exponential_fixed_at_zero(self):
        for eta in (0.1, 1.0, 5.0):
            assert potential_value(PotentialSpec.exponential(eta), 7, 0.0) == 1.0

    def test_varying_rate_value(self):
        spec = PotentialSpec.exponential_varying(0.3)
        eta = varying_rate(0.3, 3, 4)
        assert eta == pytest.approx(0.3 * math.sqrt(math.log(3) / 4), abs=1e-12)
        assert eta == pytest.approx(0.15722, abs=5e-6)
        assert potential_value(spec, 4, 2.0, n_experts=3) == pytest.approx(math.exp(eta * 2.0))

    def test_varying_requires_expert_count(self):
        with pytest.raises(ValueError):
            potential_value(PotentialSpec.exponential_varying(0.3), 4, 1.0)

    def test_default_degree_clamped(self):
        assert default_poly_degree(2) == 2.0
        assert default_poly_degree(10) == pytest.approx(2 * math.log(10))


class TestUpdateWeights:
    def test_equal_cumulative_gives_uniform(self):
        for spec in (
            PotentialSpec.polynomial(2),
            PotentialSpec.exponential(0.5),
            PotentialSpec.exponential_varying(0.3),
        ):
            w = weights_from_cumulative(spec, 3, np.array([2.0, 2.0, 2.0]))
            assert w == pytest.approx(np.full(3, 1 / 3), abs=1e-12)

    def test_exponential_closed_form(self):
        w = weights_from_cumulative(PotentialSpec.exponential(1.0), 1, np.array([math.log(2), 0.0]))
        assert w == pytest.approx([2 / 3, 1 / 3], abs=1e-12)

    def test_polynomial_closed_form(self):
        w = weights_from_cumulative(PotentialSpec.polynomial(2), 1, np.array([3.0, -1.0, 1.0]))
        assert w == pytest.approx([0.9, 0.0, 0.1], abs=1e-12)

    def test_polynomial_degenerate_is_uniform(self):
        w = weights_from_cumulative(PotentialSpec.polynomial(4), 1, np.array([-3.0, -1.0, 0.0]))
        assert w == pytest.approx(np.full(3, 1 / 3), abs=1e-12)

    def test_shift_invariance_exact_for_exponentials(self):
        rng = np.random.default_rng(1)
        for spec in (PotentialSpec.exponential(0.7), PotentialSpec.exponential_varying(0.3)):
            # bitwise equality whenever the shift cancels without rounding
            for _ in range(50):
                c = rng.integers(-50, 50, size=4).astype(float)
                shift = float(rng.integers(-1000, 1000))
                w1 = weights_from_cumulative(spec, 5, c)
                w2 = weights_from_cumulative(spec, 5, c + shift)
                assert (w1 == w2).all()
            # and agreement to rounding error for arbitrary real shifts
            for _ in range(50):
                c = rng.normal(size=4) * 10
                shift = rng.normal() * 100
                w1 = weights_from_cumulative(spec, 5, c)
                w2 = weights_from_cumulative(spec, 5, c + shift)
                assert w1 == pytest.approx(w2, abs=1e-12)

    def test_overflow_safe(self):
        w = weights_from_cumulative(PotentialSpec.exponential(1.0), 1, np.array([1e6, 0.0]))
        assert w == pytest.approx([1.0, 0.0], abs=1e-12)
        w = weights_from_cumulative(PotentialSpec.polynomial(30), 1, np.array([1e12, 1e11]))
        assert np.isfinite(w).all() and w.sum() == pytest.approx(1.0)

    def test_update_weights_reads_table(self):
        cum = CumulativeAdvantage(3)
        cum.add((0, 0, 0, 0), np.array([3.0, -1.0, 1.0]))
        w = update_weights(PotentialSpec.polynomial(2), 2, cum, (0, 0, 0, 0), 3)
        assert w == pytest.approx([0.9, 0.0, 0.1], abs=1e-12)
        # missing key reads as all-zero sums -> uniform
        w = update_weights(PotentialSpec.polynomial(2), 2, cum, (1, 1, 1, 1), 3)
        assert w == pytest.approx(np.full(3, 1 / 3), abs=1e-12)

    def test_single_expert_is_always_dirac(self):
        for spec in (PotentialSpec.polynomial(2), PotentialSpec.exponential(0.3)):
            w = weights_from_cumulative(spec, 2, np.array([1.7]))
            assert w == pytest.approx([1.0])

    def test_multiplicative_telescoping(self):
        # iterated multiplicative updates from uniform equal the one-shot
        # normalized potential of the summed advantages (fixed rate)
        rng = np.random.default_rng(5)
        eta = 0.4
        spec = PotentialSpec.exponential(eta)
        for _ in range(20):
            advs = rng.normal(size=(12, 3))
            w_iter = np.full(3, 1 / 3)
            for a in advs:
                w_iter = w_iter * np.exp(eta * (a - a.max()))
                w_iter /= w_iter.sum()
            w_sum = weights_from_cumulative(spec, 13, advs.sum(axis=0))
            assert w_iter == pytest.approx(w_sum, abs=1e-9)


class TestCumulativeAdvantage:
    def test_zero_is_identity(self):
        cum = CumulativeAdvantage(2)
        cum.add("k", np.zeros(2))
        assert cum.get("k") == pytest.approx([0.0, 0.0])

    def test_fresh_key_starts_at_zero(self):
        cum = CumulativeAdvantage(2)
        accumulate_advantage(cum, "k", np.array([1.0, -1.0]))
        assert cum.get("k") == pytest.approx([1.0, -1.0])

    def test_order_independent(self):
        a = CumulativeAdvantage(2)
        b = CumulativeAdvantage(2)
        a.add("k", np.array([1.0, 0.0]))
        a.add("k", np.array([0.0, 1.0]))
        b.add("k", np.array([0.0, 1.0]))
        b.add("k", np.array([1.0, 0.0]))
        assert a.get("k") == pytest.approx([1.0, 1.0])
        assert b.get("k") == pytest.approx([1.0, 1.0])

    def test_length_mismatch(self):
        cum = CumulativeAdvantage(2)
        with pytest.raises(ValueError):
            cum.add("k", np.zeros(3))


class TestWeightTable:
    def test_default_uniform(self):
        table = WeightTable(3)
        state = State((0, 0, 0, 0), Event(ARRIVAL, 1))
        assert table.probs(state) == pytest.approx(np.full(3, 1 / 3))

    def test_validates_distribution(self):
        table = WeightTable(2)
        with pytest.raises(ValueError):
            table.set_for_key((0,), np.array([0.7, 0.7]))
        with pytest.raises(ValueError):
            table.set_for_key((0,), np.array([-0.1, 1.1]))

    def test_json_round_trip(self, tmp_path):
        table = WeightTable(3)
        table.set_for_key((1, 2, 0, 0), np.array([0.5, 0.25, 0.25]))
        table.set_for_key((0, 0, 0, 0), np.array([1.0, 0.0, 0.0]))
        path = tmp_path / "weights.json"
        table.save(path)
        loaded = WeightTable.load(path)
        assert loaded.n_experts == 3
        assert set(loaded.keys()) == set(table.keys())
        for key in table.keys():
            assert loaded.probs_for_key(key) == pytest.approx(table.probs_for_key(key))

    def test_state_mode_round_trip(self, tmp_path):
        table = WeightTable(2, key_mode=KEY_STATE)
        state = State((1, 0, 0, 0), Event(ARRIVAL, 2))
        table.set_for_key(table.key_of(state), np.array([0.25, 0.75]))
        path = tmp_path / "weights.json"
        table.save(path)
        loaded = WeightTable.load(path)
        assert loaded.probs(state) == pytest.approx([0.25, 0.75])


class TestSampleAndAct:
    def test_degenerate_weights(self):
        table = WeightTable(3)
        state = State((2, 0, 1, 1), Event(ARRIVAL, 1))
        table.set_for_key(state.queues, np.array([0.0, 1.0, 0.0]))
        rng = np.random.default_rng(2)
        for _ in range(20):
            k, a = sample_and_act(DIAMOND, state, table, ROSTER, 0.0, rng)
            assert k == 1
            assert a in legal_actions(DIAMOND, state)

    def test_full_exploration_is_uniform(self):
        table = WeightTable(3)
        state = State((2, 0, 1, 1), Event(ARRIVAL, 1))
        table.set_for_key(state.queues, np.array([1.0, 0.0, 0.0]))
        rng = np.random.default_rng(3)
        n = 10**5
        counts = np.zeros(3)
        for _ in range(n):
            k, _ = sample_and_act(DIAMOND, state, table, ROSTER, 1.0, rng)
            counts[k] += 1
        sigma = math.sqrt((1 / 3) * (2 / 3) / n)
        assert np.abs(counts / n - 1 / 3).max() <= 3 * sigma

    def test_seeded_determinism(self):
        table = WeightTable(3)
        state = State((2, 0, 1, 1), Event(ARRIVAL, 1))
        seq1 = [sample_and_act(DIAMOND, state, table, ROSTER, 0.2, np.random.default_rng(9)) for _ in range(8)]
        seq2 = [sample_and_act(DIAMOND, state, table, ROSTER, 0.2, np.random.default_rng(9)) for _ in range(8)]
        assert seq1 == seq2
