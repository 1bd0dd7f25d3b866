"""Potential-based mixture weights over experts.

Weights over K experts are kept per state key and recomputed from the
running sums of estimated advantages through a potential function:
polynomial max(x, 0)^p, exponential with a fixed rate, or exponential
with the time-varying rate eta0 * sqrt(ln K / t). Unvisited keys stay
at the uniform initialization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import ModelConfig, State
from .experts import ExpertId, sample_expert_action

__all__ = [
    "POLYNOMIAL",
    "EXP_FIXED",
    "EXP_VARYING",
    "PotentialSpec",
    "default_poly_degree",
    "varying_rate",
    "potential_value",
    "weights_from_cumulative",
    "update_weights",
    "WeightTable",
    "CumulativeAdvantage",
    "accumulate_advantage",
    "sample_and_act",
    "KEY_QUEUES",
    "KEY_STATE",
]

POLYNOMIAL = "polynomial"
EXP_FIXED = "exponential-fixed"
EXP_VARYING = "exponential-varying"

KEY_QUEUES = "queues"
KEY_STATE = "state"


def default_poly_degree(n_experts: int) -> float:
    """Degree 2 ln K, clamped below by the minimum admissible degree 2."""
    return max(2.0, 2.0 * math.log(n_experts))


def varying_rate(eta0: float, n_experts: int, t: int) -> float:
    """Time-varying exponential rate eta0 * sqrt(ln K / t)."""
    if t < 1:
        raise ValueError("round index t must be >= 1")
    return eta0 * math.sqrt(math.log(n_experts) / t)


@dataclass(frozen=True)
class PotentialSpec:
    """A potential kind together with its single hyperparameter.

    ``param`` is the degree p for the polynomial kind, the fixed rate
    eta for the fixed-exponential kind, and the base rate eta0 for the
    varying-exponential kind (eta0 is the reciprocal of the advantage
    scale used in the varying-rate schedule).
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in (POLYNOMIAL, EXP_FIXED, EXP_VARYING):
            raise ValueError(f"unknown potential kind: {self.kind!r}")
        if self.kind == POLYNOMIAL and self.param < 2.0:
            raise ValueError("polynomial degree must be >= 2")
        if self.kind != POLYNOMIAL and self.param <= 0.0:
            raise ValueError("exponential rates must be positive")

    @staticmethod
    def polynomial(p: float) -> "PotentialSpec":
        return PotentialSpec(POLYNOMIAL, float(p))

    @staticmethod
    def exponential(eta: float) -> "PotentialSpec":
        return PotentialSpec(EXP_FIXED, float(eta))

    @staticmethod
    def exponential_varying(eta0: float) -> "PotentialSpec":
        return PotentialSpec(EXP_VARYING, float(eta0))


def potential_value(spec: PotentialSpec, t: int, x: float, n_experts: int | None = None) -> float:
    """Evaluate the potential at cumulative advantage ``x`` in round ``t``."""
    if t < 1:
        raise ValueError("round index t must be >= 1")
    if spec.kind == POLYNOMIAL:
        return max(x, 0.0) ** spec.param
    if spec.kind == EXP_FIXED:
        return math.exp(spec.param * x)
    if n_experts is None:
        raise ValueError("the varying-rate potential needs the expert count")
    return math.exp(varying_rate(spec.param, n_experts, t) * x)


def weights_from_cumulative(spec: PotentialSpec, t: int, cumulative: np.ndarray) -> np.ndarray:
    """Normalized potential values of a cumulative-advantage vector.

    Exponential kinds subtract the componentwise maximum before
    exponentiation (the ratio is unchanged, overflow is impossible);
    the polynomial kind divides by the maximum first for the same
    reason. A degenerate polynomial denominator (no positive component)
    falls back to the uniform vector.
    """
    c = np.asarray(cumulative, dtype=float)
    k = c.shape[0]
    if spec.kind == POLYNOMIAL:
        m = c.max()
        if m <= 0.0:
            return np.full(k, 1.0 / k)
        w = np.clip(c / m, 0.0, None) ** spec.param
    else:
        eta = spec.param if spec.kind == EXP_FIXED else varying_rate(spec.param, k, t)
        # subtract the max before scaling so a common shift of the sums
        # cancels before any rounding can creep in
        w = np.exp(eta * (c - c.max()))
    return w / w.sum()


def update_weights(
    spec: PotentialSpec, t: int, cum: "CumulativeAdvantage", key, n_experts: int
) -> np.ndarray:
    """Weights for one state key from its accumulated advantages."""
    if t < 1:
        raise ValueError("round index t must be >= 1")
    c = cum.get(key) if key in cum else np.zeros(n_experts)
    return weights_from_cumulative(spec, t, c)


class WeightTable:
    """Lazy per-key weight vectors; missing keys read as uniform.

    ``key_mode`` selects what indexes the table: ``queues`` (the default
    learning key) or ``state`` (full queues-plus-event keys, used for
    exactly computed mixtures).
    """

    def __init__(self, n_experts: int, key_mode: str = KEY_QUEUES):
        if n_experts < 1:
            raise ValueError("need at least one expert")
        if key_mode not in (KEY_QUEUES, KEY_STATE):
            raise ValueError(f"unknown key mode: {key_mode!r}")
        self.n_experts = n_experts
        self.key_mode = key_mode
        self._table: dict = {}
        self._uniform = np.full(n_experts, 1.0 / n_experts)

    def key_of(self, state: State):
        if self.key_mode == KEY_QUEUES:
            return state.queues
        return (state.queues, state.event.kind, state.event.cls)

    def probs(self, state: State) -> np.ndarray:
        return self._table.get(self.key_of(state), self._uniform)

    def probs_for_key(self, key) -> np.ndarray:
        return self._table.get(key, self._uniform)

    def set_for_key(self, key, probs) -> None:
        v = np.asarray(probs, dtype=float)
        if v.shape != (self.n_experts,):
            raise ValueError(f"expected a length-{self.n_experts} vector")
        if (v < 0).any() or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability vector")
        self._table[key] = v.copy()

    def snapshot(self) -> "WeightTable":
        out = WeightTable(self.n_experts, self.key_mode)
        out._table = {k: v.copy() for k, v in self._table.items()}
        return out

    def keys(self):
        return self._table.keys()

    def items(self):
        return self._table.items()

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, key) -> bool:
        return key in self._table

    # Serialization: keys are rendered as comma-joined queue counts,
    # with "|kind|class" appended in state mode.
    def _render_key(self, key) -> str:
        if self.key_mode == KEY_QUEUES:
            return ",".join(str(v) for v in key)
        queues, kind, cls = key
        return ",".join(str(v) for v in queues) + f"|{kind}|{cls}"

    @staticmethod
    def _parse_key(text: str, key_mode: str):
        if key_mode == KEY_QUEUES:
            return tuple(int(v) for v in text.split(","))
        queue_text, kind, cls = text.split("|")
        return (tuple(int(v) for v in queue_text.split(",")), kind, int(cls))

    def to_document(self) -> dict:
        return {
            "format": "matchmix.weights/1",
            "n_experts": self.n_experts,
            "key_mode": self.key_mode,
            "entries": {self._render_key(k): [float(x) for x in v] for k, v in sorted(self._table.items())},
        }

    @classmethod
    def from_document(cls, document: dict) -> "WeightTable":
        if document.get("format") != "matchmix.weights/1":
            raise ValueError("not a weight-table document")
        table = cls(int(document["n_experts"]), document.get("key_mode", KEY_QUEUES))
        for text, vec in document["entries"].items():
            table.set_for_key(cls._parse_key(text, table.key_mode), np.asarray(vec, dtype=float))
        return table

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_document()) + "\n")

    @classmethod
    def load(cls, path) -> "WeightTable":
        return cls.from_document(json.loads(Path(path).read_text()))


class CumulativeAdvantage:
    """Running componentwise sums of advantage vectors per state key."""

    def __init__(self, n_experts: int):
        self.n_experts = n_experts
        self._table: dict = {}

    def get(self, key) -> np.ndarray:
        entry = self._table.get(key)
        return np.zeros(self.n_experts) if entry is None else entry

    def add(self, key, advantage) -> None:
        v = np.asarray(advantage, dtype=float)
        if v.shape != (self.n_experts,):
            raise ValueError(f"expected a length-{self.n_experts} advantage vector")
        if not np.isfinite(v).all():
            raise ValueError("advantage entries must be finite")
        entry = self._table.get(key)
        if entry is None:
            self._table[key] = v.copy()
        else:
            entry += v

    def keys(self):
        return self._table.keys()

    def items(self):
        return self._table.items()

    def __len__(self) -> int:
        return len(self._table)

    def __contains__(self, key) -> bool:
        return key in self._table


def accumulate_advantage(cum: CumulativeAdvantage, key, advantage) -> CumulativeAdvantage:
    """Add one advantage vector to the running sum for ``key``."""
    cum.add(key, advantage)
    return cum


def sample_and_act(
    config: ModelConfig,
    state: State,
    weights: WeightTable,
    roster: tuple[ExpertId, ...],
    epsilon: float,
    rng: np.random.Generator,
) -> tuple[int, "object"]:
    """Draw an expert index (epsilon-greedy over the weights), then an action.

    With probability 1 - epsilon the expert follows the weight vector of
    the state's key; with probability epsilon it is uniform over the
    roster. The action then comes from the chosen expert and is legal by
    construction.
    """
    n = len(roster)
    if epsilon > 0.0 and rng.random() < epsilon:
        k = int(rng.integers(n))
    else:
        p = weights.probs(state)
        u = rng.random()
        acc = 0.0
        k = n - 1
        for idx in range(n):
            acc += p[idx]
            if u < acc:
                k = idx
                break
    return k, sample_expert_action(config, state, roster[k], rng)
