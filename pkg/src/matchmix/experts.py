"""The four reference expert policies.

Each expert maps a state to a distribution over legal actions. On a
placement event the experts differ only in how they choose a match
among the prospective counterpart classes; when no match is possible
they all enqueue, or trash when the queue is full. All four are
memoryless and depend only on (config, state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import (
    ENQUEUE,
    TRASH,
    Action,
    ModelConfig,
    State,
    decision_node,
    match_action,
    post_event_queues,
)

__all__ = [
    "MATCH_LONGEST",
    "GREEDY_PAYOFF",
    "RESTRICTED_GREEDY",
    "UNIFORM_RANDOM",
    "ExpertId",
    "match_longest",
    "greedy_payoff",
    "restricted_greedy",
    "uniform_random",
    "prospective_matches",
    "expert_action",
    "sample_expert_action",
]

MATCH_LONGEST = "match-longest"
GREEDY_PAYOFF = "greedy-payoff"
RESTRICTED_GREEDY = "restricted-greedy"
UNIFORM_RANDOM = "uniform-random"

_KINDS = (MATCH_LONGEST, GREEDY_PAYOFF, RESTRICTED_GREEDY, UNIFORM_RANDOM)


@dataclass(frozen=True)
class ExpertId:
    """An expert kind plus, for the restricted variant, its allowed classes."""

    kind: str
    allowed_classes: frozenset[int] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown expert kind: {self.kind!r}")
        if self.kind == RESTRICTED_GREEDY:
            if self.allowed_classes is None:
                raise ValueError("restricted-greedy requires an allowed class set")
            object.__setattr__(self, "allowed_classes", frozenset(int(c) for c in self.allowed_classes))
        elif self.allowed_classes is not None:
            raise ValueError(f"{self.kind} does not take an allowed class set")

    def label(self) -> str:
        return self.kind


def match_longest() -> ExpertId:
    return ExpertId(MATCH_LONGEST)


def greedy_payoff() -> ExpertId:
    return ExpertId(GREEDY_PAYOFF)


def restricted_greedy(allowed_classes) -> ExpertId:
    allowed = None if allowed_classes is None else frozenset(allowed_classes)
    return ExpertId(RESTRICTED_GREEDY, allowed)


def uniform_random() -> ExpertId:
    return ExpertId(UNIFORM_RANDOM)


def prospective_matches(config: ModelConfig, state: State) -> set[int]:
    """Counterpart classes available to the decision node, post-event."""
    d = decision_node(config, state)
    if d is None:
        return set()
    post = post_event_queues(config, state)
    return {j for j in config.neighbors[d] if post[j] >= 1}


def _no_match_action(config: ModelConfig, d: int, state: State) -> Action:
    return ENQUEUE if state.queues[d] <= config.capacity - 1 else TRASH


def _pick(config: ModelConfig, state: State, expert: ExpertId, d: int, cands: set[int]) -> int:
    post = post_event_queues(config, state)
    g = config.match_reward
    if expert.kind == MATCH_LONGEST:
        # longest queue first, then larger payoff, then smaller index
        return max(cands, key=lambda j: (post[j], g[(d, j)], -j))
    # greedy variants: larger payoff first, then longer queue, then smaller index
    return max(cands, key=lambda j: (g[(d, j)], post[j], -j))


def expert_action(config: ModelConfig, state: State, expert: ExpertId) -> dict[Action, float]:
    """Action distribution of one expert in one state.

    Deterministic experts return a Dirac mass; the uniform expert
    spreads evenly over the prospective matches. Departure and no-event
    rounds map to the enqueue no-op.
    """
    d = decision_node(config, state)
    if d is None:
        return {ENQUEUE: 1.0}
    matches = prospective_matches(config, state)
    cands = matches & expert.allowed_classes if expert.kind == RESTRICTED_GREEDY else matches
    if not cands:
        return {_no_match_action(config, d, state): 1.0}
    if expert.kind == UNIFORM_RANDOM:
        p = 1.0 / len(matches)
        return {match_action(d, j): p for j in sorted(matches)}
    return {match_action(d, _pick(config, state, expert, d, cands)): 1.0}


def sample_expert_action(
    config: ModelConfig, state: State, expert: ExpertId, rng: np.random.Generator
) -> Action:
    """Draw an action from the expert; fast path for simulation loops."""
    d = decision_node(config, state)
    if d is None:
        return ENQUEUE
    matches = prospective_matches(config, state)
    cands = matches & expert.allowed_classes if expert.kind == RESTRICTED_GREEDY else matches
    if not cands:
        return _no_match_action(config, d, state)
    if expert.kind == UNIFORM_RANDOM:
        choices = sorted(matches)
        return match_action(d, choices[rng.integers(len(choices))])
    return match_action(d, _pick(config, state, expert, d, cands))
