"""Stochastic matching environment with uniformized event dynamics.

A model has ``I`` item classes, each backed by a queue of capacity ``L``,
and an undirected compatibility graph whose edges carry match rewards.
Time is discretized by uniformization: at every step one event fires
(an arrival, a departure, a relocation to a designated next node, or no
event at all), and whenever an event places an item at a node the
controller decides whether to match it against a queued compatible item,
enqueue it, or trash it when the queue is full.

All class indices are 0-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "ARRIVAL",
    "DEPARTURE",
    "RELOCATION",
    "NO_EVENT",
    "EVENT_KINDS",
    "Event",
    "State",
    "Action",
    "ENQUEUE",
    "TRASH",
    "match_action",
    "action_key",
    "state_key",
    "ModelConfig",
    "ConfigError",
    "IllegalActionError",
    "TransitionError",
    "StateSpaceError",
    "event_distribution",
    "decision_node",
    "post_event_queues",
    "legal_actions",
    "reward",
    "next_queues",
    "transition_support",
    "step",
    "initial_distribution",
    "sample_initial",
    "enumerate_states",
]

ARRIVAL = "arrival"
DEPARTURE = "departure"
RELOCATION = "relocation"
NO_EVENT = "none"
EVENT_KINDS = (ARRIVAL, DEPARTURE, RELOCATION, NO_EVENT)

_PROB_TOL = 1e-15


class ConfigError(ValueError):
    """A model configuration violates one of its invariants."""


class IllegalActionError(ValueError):
    """An action was used in a state where it is not legal."""


class TransitionError(RuntimeError):
    """A queue update left the admissible range (internal consistency bug)."""


class StateSpaceError(RuntimeError):
    """State enumeration would exceed the configured cap."""


class Event(NamedTuple):
    """One uniformized event: what happened and at which class."""

    kind: str
    cls: int = -1


NO_EVENT_ATOM = Event(NO_EVENT, -1)


class State(NamedTuple):
    """Queue occupancy vector plus the event that just fired."""

    queues: tuple[int, ...]
    event: Event


class Action(NamedTuple):
    """Controller decision: match two classes, enqueue, or trash.

    ``i`` is the decision node and ``j`` the matched counterpart; both
    are -1 for enqueue/trash.
    """

    kind: str
    i: int = -1
    j: int = -1


ENQUEUE = Action("enqueue")
TRASH = Action("trash")


def match_action(i: int, j: int) -> Action:
    return Action("match", i, j)


def action_key(action: Action) -> tuple:
    """Canonical hashable key for an action; match edges are unordered."""
    if action.kind == "match":
        i, j = action.i, action.j
        return ("match", i, j) if i <= j else ("match", j, i)
    return (action.kind,)


def state_key(state: State) -> tuple[int, ...]:
    """Learning key of a state: the queue vector only."""
    return state.queues


def _as_float_tuple(values, field: str, n: int, nonnegative: bool = True) -> tuple[float, ...]:
    try:
        out = tuple(float(v) for v in values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{field}: expected a sequence of numbers") from exc
    if len(out) != n:
        raise ConfigError(f"{field}: expected length {n}, got {len(out)}")
    if nonnegative and any(v < 0 for v in out):
        raise ConfigError(f"{field}: entries must be nonnegative")
    if any(not math.isfinite(v) for v in out):
        raise ConfigError(f"{field}: entries must be finite")
    return out


@dataclass(frozen=True)
class ModelConfig:
    """Complete scenario specification.

    Fields
    ------
    class_count:      number of item classes I.
    capacity:         maximum queue length L (shared by all classes).
    arrival_rates:    per-class arrival rates.
    departure_rates:  per-class departure rates (per queued item).
    relocation_rates: per-class relocation rates (per queued item).
    next_node:        relocation destination per class, None when absent.
    edges:            compatibility edges as (i, j, match_reward), i < j.
    departure_costs:  cost incurred when an item departs from class i.
    relocation_costs: cost incurred when an item relocates from class i.
    discount:         discount factor in (0, 1).
    """

    name: str
    class_count: int
    capacity: int
    arrival_rates: tuple[float, ...]
    departure_rates: tuple[float, ...]
    relocation_rates: tuple[float, ...]
    next_node: tuple[int | None, ...]
    edges: tuple[tuple[int, int, float], ...]
    departure_costs: tuple[float, ...]
    relocation_costs: tuple[float, ...]
    discount: float

    def __post_init__(self):
        n = self.class_count
        if not isinstance(n, int) or n < 1:
            raise ConfigError("class_count: must be a positive integer")
        if not isinstance(self.capacity, int) or self.capacity < 1:
            raise ConfigError("capacity: must be a positive integer")
        object.__setattr__(self, "arrival_rates", _as_float_tuple(self.arrival_rates, "arrival_rates", n))
        object.__setattr__(self, "departure_rates", _as_float_tuple(self.departure_rates, "departure_rates", n))
        object.__setattr__(self, "relocation_rates", _as_float_tuple(self.relocation_rates, "relocation_rates", n))
        object.__setattr__(self, "departure_costs", _as_float_tuple(self.departure_costs, "departure_costs", n))
        object.__setattr__(self, "relocation_costs", _as_float_tuple(self.relocation_costs, "relocation_costs", n))

        nxt = tuple(None if v is None else int(v) for v in self.next_node)
        if len(nxt) != n:
            raise ConfigError(f"next_node: expected length {n}, got {len(nxt)}")
        for i, dest in enumerate(nxt):
            if dest is not None and not (0 <= dest < n and dest != i):
                raise ConfigError(f"next_node: entry {i} must be a different valid class index")
            if self.relocation_rates[i] > 0 and dest is None:
                raise ConfigError(f"next_node: class {i} has a positive relocation rate but no destination")
        object.__setattr__(self, "next_node", nxt)

        canonical = []
        seen = set()
        for edge in self.edges:
            try:
                i, j, g = int(edge[0]), int(edge[1]), float(edge[2])
            except (TypeError, ValueError, IndexError) as exc:
                raise ConfigError("edges: entries must be (i, j, reward) triples") from exc
            if not (0 <= i < n and 0 <= j < n):
                raise ConfigError(f"edges: endpoint out of range in ({i}, {j})")
            if i == j:
                raise ConfigError(f"edges: self-loop ({i}, {j}) is not allowed")
            if i > j:
                i, j = j, i
            if (i, j) in seen:
                raise ConfigError(f"edges: duplicate pair ({i}, {j})")
            seen.add((i, j))
            canonical.append((i, j, g))
        object.__setattr__(self, "edges", tuple(sorted(canonical)))

        if not (0.0 < self.discount < 1.0):
            raise ConfigError("discount: must lie strictly between 0 and 1")
        if self.total_rate <= 0.0:
            raise ConfigError("arrival_rates: total event rate must be positive")

    @cached_property
    def total_rate(self) -> float:
        """Uniformization rate: sum of arrival rates plus capacity times movement rates."""
        L = self.capacity
        return sum(
            lam + (mu + nu) * L
            for lam, mu, nu in zip(self.arrival_rates, self.departure_rates, self.relocation_rates)
        )

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        """Compatible classes per class, ascending."""
        adj: list[list[int]] = [[] for _ in range(self.class_count)]
        for i, j, _ in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def match_reward(self) -> dict[tuple[int, int], float]:
        """Edge reward lookup, both orientations."""
        table: dict[tuple[int, int], float] = {}
        for i, j, g in self.edges:
            table[(i, j)] = g
            table[(j, i)] = g
        return table

    @cached_property
    def reward_bounds(self) -> tuple[float, float]:
        """(min, max) of the one-step reward over legal state-action pairs."""
        worst = 0.0
        for i in range(self.class_count):
            if self.departure_rates[i] > 0:
                worst = min(worst, -self.departure_costs[i])
            if self.relocation_rates[i] > 0:
                worst = min(worst, -self.relocation_costs[i])
        best = max([0.0] + [g for _, _, g in self.edges])
        return worst, best


def event_distribution(config: ModelConfig, queues: tuple[int, ...]) -> dict[Event, float]:
    """Distribution of the next event given current queue occupancies.

    Arrivals fire at rate lambda_i, departures and relocations at
    mu_i / nu_i per queued item, all normalized by the uniformization
    rate; the remainder is the no-event atom. Only atoms with positive
    probability are returned.
    """
    rate = config.total_rate
    dist: dict[Event, float] = {}
    total = 0.0
    for i, lam in enumerate(config.arrival_rates):
        if lam > 0.0:
            p = lam / rate
            dist[Event(ARRIVAL, i)] = p
            total += p
    for i, mu in enumerate(config.departure_rates):
        occupancy = queues[i]
        if mu > 0.0 and occupancy > 0:
            p = mu * occupancy / rate
            dist[Event(DEPARTURE, i)] = p
            total += p
    for i, nu in enumerate(config.relocation_rates):
        occupancy = queues[i]
        if nu > 0.0 and occupancy > 0:
            p = nu * occupancy / rate
            dist[Event(RELOCATION, i)] = p
            total += p
    remainder = 1.0 - total
    if remainder > _PROB_TOL:
        dist[NO_EVENT_ATOM] = remainder
    return dist


def decision_node(config: ModelConfig, state: State) -> int | None:
    """Class where a newly placed item awaits a decision, or None."""
    ev = state.event
    if ev.kind == ARRIVAL:
        return ev.cls
    if ev.kind == RELOCATION:
        return config.next_node[ev.cls]
    return None


def post_event_queues(config: ModelConfig, state: State) -> tuple[int, ...]:
    """Queues after the event delta alone.

    The decision-node count may transiently exceed capacity here; bounds
    are only enforced on the net update in :func:`next_queues`.
    """
    ev = state.event
    if ev.kind == NO_EVENT:
        return state.queues
    q = list(state.queues)
    if ev.kind == ARRIVAL:
        q[ev.cls] += 1
    elif ev.kind == DEPARTURE:
        q[ev.cls] -= 1
    else:  # relocation
        q[ev.cls] -= 1
        q[config.next_node[ev.cls]] += 1
    return tuple(q)


def legal_actions(config: ModelConfig, state: State) -> list[Action]:
    """Legal decisions in ``state``, in canonical order.

    On a placement event (arrival, or relocation arriving at the next
    node) the item can be matched with any compatible class that has an
    item available on the post-event queues; it can be enqueued while
    the pre-event queue is below capacity, and must be trashed when the
    queue is full. Departure and no-event rounds admit only the enqueue
    no-op.
    """
    d = decision_node(config, state)
    if d is None:
        return [ENQUEUE]
    post = post_event_queues(config, state)
    actions = [match_action(d, j) for j in config.neighbors[d] if post[j] >= 1]
    if state.queues[d] <= config.capacity - 1:
        actions.append(ENQUEUE)
    else:
        actions.append(TRASH)
    return actions


def _reward(config: ModelConfig, state: State, action: Action) -> float:
    ev = state.event
    r = 0.0
    if ev.kind == DEPARTURE:
        r -= config.departure_costs[ev.cls]
    elif ev.kind == RELOCATION:
        r -= config.relocation_costs[ev.cls]
    if action.kind == "match":
        r += config.match_reward[(action.i, action.j)]
    return r


def reward(config: ModelConfig, state: State, action: Action) -> float:
    """One-step reward: match gain minus departure/relocation cost."""
    if action not in legal_actions(config, state):
        raise IllegalActionError(f"action {action} is not legal in state {state}")
    return _reward(config, state, action)


def next_queues(config: ModelConfig, state: State, action: Action) -> tuple[int, ...]:
    """Net queue update from the event delta plus the action delta.

    The deltas are summed before the bounds check so that, e.g., an
    arrival at a full queue followed by a trash never transiently
    exceeds capacity.
    """
    q = list(state.queues)
    ev = state.event
    if ev.kind == ARRIVAL:
        q[ev.cls] += 1
    elif ev.kind == DEPARTURE:
        q[ev.cls] -= 1
    elif ev.kind == RELOCATION:
        q[ev.cls] -= 1
        q[config.next_node[ev.cls]] += 1
    if action.kind == "match":
        q[action.i] -= 1
        q[action.j] -= 1
    elif action.kind == "trash":
        if ev.kind == ARRIVAL:
            q[ev.cls] -= 1
        elif ev.kind == RELOCATION:
            q[config.next_node[ev.cls]] -= 1
    L = config.capacity
    for i, v in enumerate(q):
        if not 0 <= v <= L:
            raise TransitionError(
                f"queue {i} left [0, {L}] (got {v}) for state {state}, action {action}"
            )
    return tuple(q)


def transition_support(
    config: ModelConfig, state: State, action: Action, validate: bool = True
) -> list[tuple[State, float]]:
    """All successor states with their probabilities.

    The queue update is deterministic; randomness enters only through
    the next event, drawn on the updated queues.
    """
    if validate and action not in legal_actions(config, state):
        raise IllegalActionError(f"action {action} is not legal in state {state}")
    q2 = next_queues(config, state, action)
    return [(State(q2, ev), p) for ev, p in event_distribution(config, q2).items()]


def _sample_event(config: ModelConfig, queues: tuple[int, ...], rng: np.random.Generator) -> Event:
    u = rng.random() * config.total_rate
    acc = 0.0
    for i, lam in enumerate(config.arrival_rates):
        acc += lam
        if u < acc:
            return Event(ARRIVAL, i)
    for i, mu in enumerate(config.departure_rates):
        if mu > 0.0:
            acc += mu * queues[i]
            if u < acc:
                return Event(DEPARTURE, i)
    for i, nu in enumerate(config.relocation_rates):
        if nu > 0.0:
            acc += nu * queues[i]
            if u < acc:
                return Event(RELOCATION, i)
    return NO_EVENT_ATOM


def step(
    config: ModelConfig, state: State, action: Action, rng: np.random.Generator
) -> tuple[State, float]:
    """Sample one transition; returns (next state, reward).

    The reward component is deterministic and equals
    ``reward(config, state, action)``.
    """
    r = _reward(config, state, action)
    q2 = next_queues(config, state, action)
    return State(q2, _sample_event(config, q2, rng)), r


def initial_distribution(config: ModelConfig) -> dict[State, float]:
    """Start distribution: empty queues, arrival class drawn by arrival rate."""
    lam_total = sum(config.arrival_rates)
    empty = (0,) * config.class_count
    return {
        State(empty, Event(ARRIVAL, i)): lam / lam_total
        for i, lam in enumerate(config.arrival_rates)
        if lam > 0.0
    }


def sample_initial(config: ModelConfig, rng: np.random.Generator) -> State:
    lam_total = sum(config.arrival_rates)
    u = rng.random() * lam_total
    acc = 0.0
    cls = 0
    for i, lam in enumerate(config.arrival_rates):
        acc += lam
        if u < acc:
            cls = i
            break
    else:
        cls = max(i for i, lam in enumerate(config.arrival_rates) if lam > 0.0)
    empty = (0,) * config.class_count
    return State(empty, Event(ARRIVAL, cls))


def iter_queue_vectors(config: ModelConfig) -> Iterator[tuple[int, ...]]:
    """All queue occupancy vectors in lexicographic order."""
    return itertools.product(range(config.capacity + 1), repeat=config.class_count)


def enumerate_states(config: ModelConfig, cap: int = 10**6) -> list[State]:
    """Every (queues, event) pair with positive event probability.

    Raises :class:`StateSpaceError` when the enumeration would exceed
    ``cap`` states.
    """
    n_queues = (config.capacity + 1) ** config.class_count
    variants = 1  # no-event atom
    variants += sum(1 for lam in config.arrival_rates if lam > 0.0)
    variants += sum(1 for mu in config.departure_rates if mu > 0.0)
    variants += sum(1 for nu in config.relocation_rates if nu > 0.0)
    if n_queues * variants > cap:
        raise StateSpaceError(
            f"state space of up to {n_queues * variants} states exceeds the cap of {cap}"
        )
    states: list[State] = []
    for q in iter_queue_vectors(config):
        for ev in event_distribution(config, q):
            states.append(State(q, ev))
    return states
