"""Tabular estimation and learning.

One-step TD estimation of per-expert Q values under a fixed mixture,
the round-based orchestration loop that feeds estimated advantages into
the potential update, an epsilon-greedy Q-learning baseline over either
primitive actions or the expert roster, and a multi-run harness that
measures how fast the expected TD bias contracts toward zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import (
    Action,
    ModelConfig,
    State,
    action_key,
    legal_actions,
    sample_initial,
    state_key,
    step,
)
from .exact import evaluate_mixture
from .experts import ExpertId, expert_action, sample_expert_action
from .orchestrator import (
    CumulativeAdvantage,
    PotentialSpec,
    WeightTable,
    sample_and_act,
    weights_from_cumulative,
)

__all__ = [
    "QTable",
    "unit_reward_map",
    "td_estimate",
    "advantage_from_q",
    "OrchestrationRun",
    "tabular_orchestration_loop",
    "GreedyQPolicy",
    "QLearningRun",
    "q_learning_baseline",
    "BiasTrace",
    "bias_trace",
]


@dataclass
class QTable:
    """Per-key action-value rows, zero by default."""

    n_actions: int
    alpha: float
    gamma: float
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        zeros = np.zeros(self.n_actions)
        zeros.flags.writeable = False
        self._zeros = zeros

    def get(self, key) -> np.ndarray:
        """Row for ``key`` (read-only zeros when the key is unvisited)."""
        row = self.entries.get(key)
        return self._zeros if row is None else row

    def entry(self, key) -> np.ndarray:
        """Writable row for ``key``, created on first access."""
        row = self.entries.get(key)
        if row is None:
            row = np.zeros(self.n_actions)
            self.entries[key] = row
        return row

    def snapshot(self) -> "QTable":
        clone = QTable(self.n_actions, self.alpha, self.gamma)
        clone.entries = {k: v.copy() for k, v in self.entries.items()}
        return clone

    def max_abs(self) -> float:
        if not self.entries:
            return 0.0
        return max(float(np.abs(v).max()) for v in self.entries.values())


def unit_reward_map(config: ModelConfig) -> tuple[float, float]:
    """Affine map (scale, shift) taking this scenario's rewards onto [0, 1]."""
    lo, hi = config.reward_bounds
    if hi <= lo:
        return 1.0, 0.0
    scale = 1.0 / (hi - lo)
    return scale, -lo * scale


def _draw_index(probs: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    acc = 0.0
    last = len(probs) - 1
    for idx in range(last):
        acc += probs[idx]
        if u < acc:
            return idx
    return last


def td_estimate(
    config: ModelConfig,
    weights: WeightTable,
    roster: tuple[ExpertId, ...],
    horizon: int,
    alpha: float,
    rng: np.random.Generator,
    *,
    q_table: QTable | None = None,
    key_fn=state_key,
    behavior_epsilon: float = 0.0,
    reward_map: tuple[float, float] | None = None,
    start_state: State | None = None,
    record_updates: bool = False,
):
    """One-step TD estimation of Q(key, expert) under the mixture.

    Each of the ``horizon`` steps draws an expert from the weights (with
    optional epsilon exploration for the behavior only), executes its
    action, and moves the visited entry toward
    ``r + gamma * Q(next key, k')`` where ``k'`` is a fresh draw from
    the weights at the next state. All other entries are untouched.

    Returns the table, or ``(table, updates)`` with a per-step list of
    ``(key, expert, new_value)`` when ``record_updates`` is set.
    """
    if not 0.0 <= alpha < 1.0:
        raise ValueError("step size alpha must lie in [0, 1)")
    table = q_table if q_table is not None else QTable(len(roster), alpha, config.discount)
    scale, shift = reward_map if reward_map is not None else (1.0, 0.0)
    gamma = config.discount
    s = start_state if start_state is not None else sample_initial(config, rng)
    updates = [] if record_updates else None
    for _ in range(horizon):
        k, a = sample_and_act(config, s, weights, roster, behavior_epsilon, rng)
        s2, r = step(config, s, a, rng)
        k2 = _draw_index(weights.probs(s2), rng)
        target = scale * r + shift + gamma * table.get(key_fn(s2))[k2]
        row = table.entry(key_fn(s))
        row[k] = (1.0 - alpha) * row[k] + alpha * target
        if updates is not None:
            updates.append((key_fn(s), k, row[k]))
        s = s2
    if record_updates:
        return table, updates
    return table


def advantage_from_q(table: QTable, weights: WeightTable, key) -> np.ndarray:
    """Center the Q row at its mixture value: A_k = Q_k - sum_j q_j Q_j."""
    row = table.get(key)
    probs = weights.probs_for_key(key)
    return row - float(probs @ row)


@dataclass
class OrchestrationRun:
    """Snapshots of the learned weights after 0..T policy updates."""

    snapshots: list[WeightTable]
    cumulative: CumulativeAdvantage
    q_table: QTable | None


def tabular_orchestration_loop(
    config: ModelConfig,
    roster: tuple[ExpertId, ...],
    potential: PotentialSpec,
    n_updates: int,
    horizon: int,
    alpha: float,
    rng: np.random.Generator,
    *,
    epsilon=0.0,
    warm_start: bool = True,
    reward_map: tuple[float, float] | None = "auto",
    advantage_source=None,
) -> OrchestrationRun:
    """Round-based policy learning over the expert roster.

    Starting from uniform weights, every round estimates advantages
    under the current mixture (``horizon`` TD steps from a fresh initial
    state, warm-starting the Q table across rounds unless disabled),
    adds them to the per-key running sums, and recomputes the weights
    through the potential. ``advantage_source(weights, rng)`` replaces
    the TD estimate when given (used to inject oracle advantages).

    Rewards are mapped onto [0, 1] by default so that advantage
    magnitudes match the scales the potential hyperparameters assume;
    pass ``reward_map=None`` to learn on raw rewards.
    """
    if n_updates < 1:
        raise ValueError("need at least one policy update")
    n_experts = len(roster)
    if reward_map == "auto":
        reward_map = unit_reward_map(config)
    weights = WeightTable(n_experts)
    cumulative = CumulativeAdvantage(n_experts)
    snapshots = [weights.snapshot()]
    table: QTable | None = None
    for t in range(1, n_updates + 1):
        eps_t = epsilon(t) if callable(epsilon) else epsilon
        if advantage_source is not None:
            advantages = advantage_source(weights, rng)
        else:
            table = td_estimate(
                config,
                weights,
                roster,
                horizon,
                alpha,
                rng,
                q_table=table if warm_start else None,
                key_fn=state_key,
                behavior_epsilon=eps_t,
                reward_map=reward_map,
            )
            advantages = {key: advantage_from_q(table, weights, key) for key in table.entries}
        for key, adv in advantages.items():
            cumulative.add(key, adv)
        for key in cumulative.keys():
            weights.set_for_key(key, weights_from_cumulative(potential, t + 1, cumulative.get(key)))
        snapshots.append(weights.snapshot())
    return OrchestrationRun(snapshots, cumulative, table)


class GreedyQPolicy:
    """Greedy policy over a learned Q table (ties to the smallest slot)."""

    def __init__(self, config: ModelConfig, table: QTable, roster=None):
        self.config = config
        self.table = table
        self.roster = tuple(roster) if roster is not None else None
        if self.roster is None:
            self._slot_of = _primitive_slots(config)

    def _greedy_slot(self, state: State, legal_slots) -> int:
        row = self.table.get(state_key(state))
        best = legal_slots[0]
        for slot in legal_slots[1:]:
            if row[slot] > row[best]:
                best = slot
        return best

    def action_distribution(self, state: State):
        """(action, probability) pairs of the greedy decision."""
        if self.roster is not None:
            k = self._greedy_slot(state, list(range(len(self.roster))))
            return list(expert_action(self.config, state, self.roster[k]).items())
        return [(self.action(state), 1.0)]

    def action(self, state: State) -> Action:
        if self.roster is not None:
            raise ValueError("greedy policy over a roster is not a single action")
        legal = legal_actions(self.config, state)
        slots = sorted(self._slot_of[action_key(a)] for a in legal)
        best = self._greedy_slot(state, slots)
        for a in legal:
            if self._slot_of[action_key(a)] == best:
                return a
        raise AssertionError("unreachable")

    def act(self, state: State, rng: np.random.Generator) -> Action:
        if self.roster is None:
            return self.action(state)
        k = self._greedy_slot(state, list(range(len(self.roster))))
        return sample_expert_action(self.config, state, self.roster[k], rng)


def _primitive_slots(config: ModelConfig) -> dict:
    """Canonical slot per primitive action: edges in order, then enqueue, trash."""
    slots = {("match", i, j): idx for idx, (i, j, _) in enumerate(config.edges)}
    slots[("enqueue",)] = len(config.edges)
    slots[("trash",)] = len(config.edges) + 1
    return slots


@dataclass
class QLearningRun:
    table: QTable
    policy: GreedyQPolicy
    checkpoints: dict[int, QTable]


def q_learning_baseline(
    config: ModelConfig,
    action_space,
    horizon: int,
    alpha: float,
    epsilon0: float,
    decay: float,
    rng: np.random.Generator,
    *,
    reward_map: tuple[float, float] | None = "auto",
    checkpoints=(),
    start_state: State | None = None,
) -> QLearningRun:
    """Q-learning with multiplicative epsilon decay.

    ``action_space`` is either the string ``"primitive"`` (slots are the
    compatibility edges plus enqueue and trash) or an expert roster
    (slots are expert indices, giving Q-learning over super-actions).
    The greedy policy breaks ties toward the smallest slot.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("step size alpha must lie in (0, 1)")
    if not (0.0 < epsilon0 < 1.0 and 0.0 < decay < 1.0):
        raise ValueError("epsilon0 and decay must lie in (0, 1)")
    if reward_map == "auto":
        reward_map = unit_reward_map(config)
    scale, shift = reward_map if reward_map is not None else (1.0, 0.0)
    gamma = config.discount

    roster = None if action_space == "primitive" else tuple(action_space)
    if roster is None:
        slot_of = _primitive_slots(config)
        n_slots = len(config.edges) + 2
    else:
        n_slots = len(roster)

    table = QTable(n_slots, alpha, gamma)
    snapshots: dict[int, QTable] = {}
    wanted = set(int(c) for c in checkpoints)
    eps = epsilon0
    s = start_state if start_state is not None else sample_initial(config, rng)
    for tau in range(horizon):
        if roster is None:
            legal = legal_actions(config, s)
            slots = sorted(slot_of[action_key(a)] for a in legal)
            if rng.random() < eps:
                slot = slots[int(rng.integers(len(slots)))]
            else:
                row = table.get(state_key(s))
                slot = max(slots, key=lambda c: (row[c], -c))
            a = next(x for x in legal if slot_of[action_key(x)] == slot)
        else:
            if rng.random() < eps:
                slot = int(rng.integers(n_slots))
            else:
                row = table.get(state_key(s))
                slot = int(np.argmax(row))
            a = sample_expert_action(config, s, roster[slot], rng)
        s2, r = step(config, s, a, rng)
        if roster is None:
            legal2 = legal_actions(config, s2)
            row2 = table.get(state_key(s2))
            best_next = max(float(row2[slot_of[action_key(x)]]) for x in legal2)
        else:
            best_next = float(table.get(state_key(s2)).max())
        row = table.entry(state_key(s))
        row[slot] = (1.0 - alpha) * row[slot] + alpha * (scale * r + shift + gamma * best_next)
        eps *= decay
        s = s2
        if tau + 1 in wanted:
            snapshots[tau + 1] = table.snapshot()
    return QLearningRun(table, GreedyQPolicy(config, table, roster), snapshots)


@dataclass
class BiasTrace:
    """Per-step sup norm of the mean TD bias over the restricted entries."""

    values: np.ndarray
    noise_bound: np.ndarray
    slope: float
    decay_rate: float
    r_squared: float
    restricted_entries: int

    def within_noise(self) -> bool:
        return bool((self.values <= self.noise_bound).all())


def bias_trace(
    config: ModelConfig,
    weights: WeightTable,
    roster: tuple[ExpertId, ...],
    runs: int,
    horizon: int,
    alpha: float,
    rng: np.random.Generator,
    *,
    init_exact: bool = False,
    tol: float = 1e-10,
) -> BiasTrace:
    """Measure the contraction of the expected TD bias under a fixed mixture.

    Runs ``runs`` independent TD estimations keyed on full states,
    tracks ``b_tau = mean_runs(Q_tau) - Q_exact`` restricted to the
    state-expert entries updated at least once in half the runs, and
    fits a line to the log trace over its tail half. ``init_exact``
    starts every run at the exact Q values, for which the mean bias
    should stay within sampling noise (the reported noise bound is three
    standard errors of the run mean).
    """
    roster = tuple(roster)
    n_experts = len(roster)
    evaluation = evaluate_mixture(config, weights, roster, tol)
    states = evaluation.value.states
    index = {s: i for i, s in enumerate(states)}
    q_exact = evaluation.q_values
    n_states = len(states)

    key_idx = np.empty((runs, horizon), dtype=np.int32)
    k_idx = np.empty((runs, horizon), dtype=np.int8)
    new_val = np.empty((runs, horizon))
    child_rngs = rng.spawn(runs)
    for n in range(runs):
        init = QTable(n_experts, alpha, config.discount)
        if init_exact:
            init.entries = {s: q_exact[i].copy() for i, s in enumerate(states)}
        _, updates = td_estimate(
            config,
            weights,
            roster,
            horizon,
            alpha,
            child_rngs[n],
            q_table=init,
            key_fn=lambda s: s,
            record_updates=True,
        )
        for tau, (key, k, val) in enumerate(updates):
            key_idx[n, tau] = index[key]
            k_idx[n, tau] = k
            new_val[n, tau] = val

    visited = np.zeros((n_states, n_experts), dtype=np.int32)
    for n in range(runs):
        seen = np.zeros((n_states, n_experts), dtype=bool)
        seen[key_idx[n], k_idx[n]] = True
        visited += seen
    mask = 2 * visited >= runs
    if not mask.any():
        raise ValueError("no state-expert entry was visited in half the runs")

    run_tab = np.tile(q_exact, (runs, 1, 1)) if init_exact else np.zeros((runs, n_states, n_experts))
    sums = run_tab.sum(axis=0)
    squares = (run_tab**2).sum(axis=0)
    run_ids = np.arange(runs)
    values = np.empty(horizon)
    noise = np.empty(horizon)
    for tau in range(horizon):
        ki = key_idx[:, tau]
        kk = k_idx[:, tau]
        val = new_val[:, tau]
        old = run_tab[run_ids, ki, kk]
        np.add.at(sums, (ki, kk), val - old)
        np.add.at(squares, (ki, kk), val * val - old * old)
        run_tab[run_ids, ki, kk] = val
        mean = sums / runs
        values[tau] = np.abs(mean - q_exact)[mask].max()
        variance = np.maximum(squares / runs - mean**2, 0.0)
        noise[tau] = 3.0 * math.sqrt(variance[mask].max() / runs)

    tail = values[horizon // 2 :]
    taus = np.arange(horizon // 2, horizon, dtype=float)
    positive = tail > 0
    if positive.sum() >= 2:
        y = np.log(tail[positive])
        x = taus[positive]
        slope, intercept = np.polyfit(x, y, 1)
        fitted = slope * x + intercept
        ss_res = float(((y - fitted) ** 2).sum())
        ss_tot = float(((y - y.mean()) ** 2).sum())
        r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    else:
        slope, r_squared = 0.0, 0.0
    return BiasTrace(
        values=values,
        noise_bound=noise,
        slope=float(slope),
        decay_rate=float(math.exp(slope)),
        r_squared=float(r_squared),
        restricted_entries=int(mask.sum()),
    )
