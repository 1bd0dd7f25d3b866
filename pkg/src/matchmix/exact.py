"""Exact evaluation on enumerable models.

Policy evaluation, best-in-class mixture search, and globally optimal
values are all computed by iterating the Bellman operator over the
enumerated state space; the discount factor makes each sweep a
contraction, so the residual of the returned table is certified. Sparse
transition matrices are compiled once per (config, roster) and reused
across evaluations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil, log
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .env import (
    ModelConfig,
    State,
    enumerate_states,
    event_distribution,
    initial_distribution,
    legal_actions,
    next_queues,
    reward,
)
from .experts import ExpertId, expert_action
from .orchestrator import KEY_STATE, WeightTable

__all__ = [
    "ValueTable",
    "MixtureEvaluation",
    "ConvergenceError",
    "evaluate_mixture",
    "evaluate_expert",
    "evaluate_policy",
    "best_mixture",
    "optimal_value",
    "value_at_initial",
]


class ConvergenceError(RuntimeError):
    """Value iteration failed to reach the residual tolerance in budget."""


@dataclass
class ValueTable:
    """State values with the certified Bellman residual."""

    states: tuple[State, ...]
    values: np.ndarray
    residual: float
    iterations: int
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._index:
            self._index = {s: i for i, s in enumerate(self.states)}

    def value(self, state: State) -> float:
        return float(self.values[self._index[state]])

    def index_of(self, state: State) -> int:
        return self._index[state]

    def as_dict(self) -> dict[State, float]:
        return {s: float(v) for s, v in zip(self.states, self.values)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["queue_vector", "event", "value"])
            for s, v in zip(self.states, self.values):
                ev = s.event
                label = ev.kind if ev.cls < 0 else f"{ev.kind}@{ev.cls}"
                writer.writerow(["-".join(str(x) for x in s.queues), label, repr(float(v))])


@dataclass
class MixtureEvaluation:
    """Value, per-expert Q, and per-expert advantage of a mixture policy."""

    value: ValueTable
    q_values: np.ndarray
    advantages: np.ndarray

    def q(self, state: State, k: int) -> float:
        return float(self.q_values[self.value.index_of(state), k])

    def advantage_vector(self, state: State) -> np.ndarray:
        return self.advantages[self.value.index_of(state)].copy()


def _iteration_budget(config: ModelConfig, tol: float) -> int:
    lo, hi = config.reward_bounds
    vmax = max(abs(lo), abs(hi), 1.0) / (1.0 - config.discount)
    return ceil(log(tol * (1.0 - config.discount) / vmax) / log(config.discount)) + 60


@lru_cache(maxsize=8)
def _compiled_states(config: ModelConfig):
    states = tuple(enumerate_states(config))
    index = {s: i for i, s in enumerate(states)}
    return states, index


def _policy_matrices(config: ModelConfig, states, index, policy_fn):
    """Expected reward vector and successor matrix of one policy."""
    n = len(states)
    rows, cols, data = [], [], []
    r = np.zeros(n)
    for si, s in enumerate(states):
        for a, pa in policy_fn(s):
            r[si] += pa * reward(config, s, a)
            q2 = next_queues(config, s, a)
            for ev, pe in event_distribution(config, q2).items():
                rows.append(si)
                cols.append(index[State(q2, ev)])
                data.append(pa * pe)
    P = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    return r, P


@lru_cache(maxsize=8)
def _compiled_roster(config: ModelConfig, roster: tuple[ExpertId, ...]):
    states, index = _compiled_states(config)
    rewards, transitions = [], []
    for expert in roster:
        r, P = _policy_matrices(
            config, states, index, lambda s, e=expert: expert_action(config, s, e).items()
        )
        rewards.append(r)
        transitions.append(P)
    return states, index, rewards, transitions


def _weight_matrix(weights: WeightTable, states, n_experts: int) -> np.ndarray:
    q = np.empty((len(states), n_experts))
    for i, s in enumerate(states):
        q[i] = weights.probs(s)
    return q


def evaluate_mixture(
    config: ModelConfig,
    weights: WeightTable,
    roster: tuple[ExpertId, ...],
    tol: float = 1e-10,
) -> MixtureEvaluation:
    """Exact value, Q, and advantage of the mixture induced by ``weights``.

    Iterates value backups until successive sweeps differ by at most
    ``tol`` in the max norm; the reported residual is the final backup
    difference of the returned table.
    """
    roster = tuple(roster)
    states, index, rewards, transitions = _compiled_roster(config, roster)
    q_mat = _weight_matrix(weights, states, len(roster))
    gamma = config.discount
    budget = _iteration_budget(config, tol)

    v = np.zeros(len(states))
    diff = np.inf
    iterations = 0
    for iterations in range(1, budget + 1):
        q_k = np.stack([r + gamma * (P @ v) for r, P in zip(rewards, transitions)], axis=1)
        v_new = np.einsum("sk,sk->s", q_mat, q_k)
        diff = float(np.abs(v_new - v).max())
        v = v_new
        if diff <= tol:
            break
    if diff > tol:
        raise ConvergenceError(f"residual {diff:.3e} > tol {tol:.3e} after {iterations} sweeps")

    q_k = np.stack([r + gamma * (P @ v) for r, P in zip(rewards, transitions)], axis=1)
    v_final = np.einsum("sk,sk->s", q_mat, q_k)
    residual = float(np.abs(v_final - v).max())
    table = ValueTable(states, v_final, residual, iterations + 1, dict(index))
    return MixtureEvaluation(table, q_k, q_k - v_final[:, None])


def evaluate_expert(
    config: ModelConfig, expert: ExpertId, tol: float = 1e-10
) -> MixtureEvaluation:
    """Exact evaluation of a single expert (a Dirac mixture over it)."""
    return evaluate_mixture(config, WeightTable(1), (expert,), tol)


def evaluate_policy(config: ModelConfig, policy_fn, tol: float = 1e-10) -> ValueTable:
    """Exact value of an arbitrary policy.

    ``policy_fn(state)`` must return an iterable of (action, probability)
    pairs over legal actions.
    """
    states, index = _compiled_states(config)
    r, P = _policy_matrices(config, states, index, policy_fn)
    gamma = config.discount
    budget = _iteration_budget(config, tol)

    v = np.zeros(len(states))
    diff = np.inf
    iterations = 0
    for iterations in range(1, budget + 1):
        v_new = r + gamma * (P @ v)
        diff = float(np.abs(v_new - v).max())
        v = v_new
        if diff <= tol:
            break
    if diff > tol:
        raise ConvergenceError(f"residual {diff:.3e} > tol {tol:.3e} after {iterations} sweeps")
    v_final = r + gamma * (P @ v)
    residual = float(np.abs(v_final - v).max())
    return ValueTable(states, v_final, residual, iterations + 1, dict(index))


def best_mixture(
    config: ModelConfig,
    roster: tuple[ExpertId, ...],
    tol: float = 1e-10,
    max_rounds: int = 100,
) -> tuple[WeightTable, MixtureEvaluation]:
    """Best-in-class mixture by policy iteration over expert selections.

    Each round evaluates the current deterministic selection and then
    switches every state to the expert with the largest Q value (ties to
    the smallest index, switching only on strict improvement so the
    iteration terminates). The result dominates every roster expert
    pointwise up to the solver tolerance.
    """
    roster = tuple(roster)
    states, _, _, _ = _compiled_roster(config, roster)
    n = len(states)
    selection = np.zeros(n, dtype=int)
    switch_eps = 100.0 * tol

    evaluation = None
    for _ in range(max_rounds):
        weights = WeightTable(len(roster), key_mode=KEY_STATE)
        for i, s in enumerate(states):
            vec = np.zeros(len(roster))
            vec[selection[i]] = 1.0
            weights.set_for_key(weights.key_of(s), vec)
        evaluation = evaluate_mixture(config, weights, roster, tol)
        q = evaluation.q_values
        greedy = np.argmax(q, axis=1)
        current = q[np.arange(n), selection]
        improved = q[np.arange(n), greedy] > current + switch_eps
        if not improved.any():
            return weights, evaluation
        selection = np.where(improved, greedy, selection)
    raise ConvergenceError(f"policy iteration did not settle within {max_rounds} rounds")


@lru_cache(maxsize=8)
def _compiled_actions(config: ModelConfig):
    states, index = _compiled_states(config)
    offsets = []
    rows, cols, data = [], [], []
    r = []
    count = 0
    for si, s in enumerate(states):
        offsets.append(count)
        for a in legal_actions(config, s):
            r.append(reward(config, s, a))
            q2 = next_queues(config, s, a)
            for ev, pe in event_distribution(config, q2).items():
                rows.append(count)
                cols.append(index[State(q2, ev)])
                data.append(pe)
            count += 1
    P = sp.csr_matrix((data, (rows, cols)), shape=(count, len(states)))
    return states, index, np.asarray(r), P, np.asarray(offsets)


def optimal_value(config: ModelConfig, tol: float = 1e-10) -> ValueTable:
    """Optimal value over all stationary policies, by value iteration."""
    states, index, r, P, offsets = _compiled_actions(config)
    gamma = config.discount
    budget = _iteration_budget(config, tol)

    v = np.zeros(len(states))
    diff = np.inf
    iterations = 0
    for iterations in range(1, budget + 1):
        v_new = np.maximum.reduceat(r + gamma * (P @ v), offsets)
        diff = float(np.abs(v_new - v).max())
        v = v_new
        if diff <= tol:
            break
    if diff > tol:
        raise ConvergenceError(f"residual {diff:.3e} > tol {tol:.3e} after {iterations} sweeps")
    v_final = np.maximum.reduceat(r + gamma * (P @ v), offsets)
    residual = float(np.abs(v_final - v).max())
    return ValueTable(states, v_final, residual, iterations + 1, dict(index))


def value_at_initial(config: ModelConfig, table: ValueTable) -> float:
    """Expectation of the value table under the initial distribution."""
    total = 0.0
    for s0, p in initial_distribution(config).items():
        try:
            total += p * table.value(s0)
        except KeyError:
            raise KeyError(f"value table does not cover the initial state {s0}") from None
    return total
