"""Built-in scenarios and the JSON scenario-document format.

Three models ship with the package (class indices are 0-based):

``diamond``
    Four classes, five edges, arrivals only. The edge (1, 3) pays 200,
    dominating the other rewards.
``organ_a``
    Sixteen classes: four donor classes (one per blood group O, A, B,
    AB) and twelve recipient classes split by blood group and urgency
    (high, medium, low). Recipients may depart or escalate to the next
    urgency level; edge rewards equal the recipient's urgency reward.
``organ_b``
    Same bipartite structure with blood-group arrival rates, deeper
    queues (L=15), discount 0.9, and a different urgency table.
"""

from __future__ import annotations

import json
from pathlib import Path

from .env import ConfigError, ModelConfig
from .experts import ExpertId, greedy_payoff, match_longest, restricted_greedy, uniform_random

__all__ = [
    "SCENARIO_NAMES",
    "build_scenario",
    "default_roster",
    "config_to_document",
    "document_to_config",
    "save_scenario",
    "load_scenario",
]

_DOCUMENT_FIELDS = (
    "name",
    "class_count",
    "capacity",
    "arrival_rates",
    "departure_rates",
    "relocation_rates",
    "next_node",
    "edges",
    "departure_costs",
    "relocation_costs",
    "discount",
)


def _diamond() -> ModelConfig:
    return ModelConfig(
        name="diamond",
        class_count=4,
        capacity=5,
        arrival_rates=(0.125, 0.225, 0.15, 0.05),
        departure_rates=(0.0,) * 4,
        relocation_rates=(0.0,) * 4,
        next_node=(None,) * 4,
        edges=(
            (0, 1, 10.0),
            (0, 2, 1.0),
            (1, 2, 50.0),
            (1, 3, 200.0),
            (2, 3, 20.0),
        ),
        departure_costs=(0.0,) * 4,
        relocation_costs=(0.0,) * 4,
        discount=0.8,
    )


# Blood-group compatibility, donor -> recipient groups.
_COMPATIBLE = {
    "O": ("O", "A", "B", "AB"),
    "A": ("A", "AB"),
    "B": ("B", "AB"),
    "AB": ("AB",),
}
_GROUPS = ("O", "A", "B", "AB")
_URGENCIES = ("high", "medium", "low")


def _organ_layout() -> tuple[dict[int, str], dict[int, tuple[str, str]]]:
    """Class layout shared by both organ scenarios.

    Classes 0-3 are donors for O, A, B, AB; classes 4-15 are recipients
    in blood-group blocks of three, ordered high, medium, low.
    """
    donors = {g_idx: group for g_idx, group in enumerate(_GROUPS)}
    recipients: dict[int, tuple[str, str]] = {}
    for g_idx, group in enumerate(_GROUPS):
        for u_idx, urgency in enumerate(_URGENCIES):
            recipients[4 + 3 * g_idx + u_idx] = (group, urgency)
    return donors, recipients


def _organ_edges(rewards: dict[str, float]) -> list[tuple[int, int, float]]:
    donors, recipients = _organ_layout()
    edges = []
    for d_cls, d_group in donors.items():
        for r_cls, (r_group, urgency) in recipients.items():
            if r_group in _COMPATIBLE[d_group]:
                edges.append((d_cls, r_cls, rewards[urgency]))
    return edges


def _organ_next_nodes() -> list[int | None]:
    """Relocation escalates a recipient to the next-higher urgency class."""
    nxt: list[int | None] = [None] * 16
    _, recipients = _organ_layout()
    for cls, (group, urgency) in recipients.items():
        if urgency == "medium":
            nxt[cls] = cls - 1  # medium -> high
        elif urgency == "low":
            nxt[cls] = cls - 1  # low -> medium
    return nxt


def _organ_a() -> ModelConfig:
    # Per-class (arrival, departure, relocation) rates; donors first,
    # then recipient blocks (high, medium, low) per blood group.
    rates = [
        (0.1, 0.0, 0.0),
        (0.002, 0.0, 0.0),
        (0.082, 0.0, 0.0),
        (0.097, 0.0, 0.0),
        (0.065, 0.0008, 0.0),
        (0.029, 0.0003, 0.0005),
        (0.025, 0.0001, 0.0005),
        (0.098, 0.0008, 0.0),
        (0.022, 0.0003, 0.0005),
        (0.011, 0.0001, 0.0005),
        (0.089, 0.0008, 0.0),
        (0.124, 0.0003, 0.03),
        (0.0005, 0.0001, 0.0005),
        (0.067, 0.0008, 0.0),
        (0.105, 0.0003, 0.0005),
        (0.079, 0.0001, 0.0005),
    ]
    match_rewards = {"high": 1000.0, "medium": 200.0, "low": 50.0}
    departure = {"high": 10.0, "medium": 20.0, "low": 30.0}
    relocation = {"high": 0.0, "medium": 10.0, "low": 5.0}
    _, recipients = _organ_layout()
    d_costs = [0.0] * 16
    r_costs = [0.0] * 16
    for cls, (_, urgency) in recipients.items():
        d_costs[cls] = departure[urgency]
        r_costs[cls] = relocation[urgency]
    return ModelConfig(
        name="organ_a",
        class_count=16,
        capacity=5,
        arrival_rates=tuple(r[0] for r in rates),
        departure_rates=tuple(r[1] for r in rates),
        relocation_rates=tuple(r[2] for r in rates),
        next_node=tuple(_organ_next_nodes()),
        edges=tuple(_organ_edges(match_rewards)),
        departure_costs=tuple(d_costs),
        relocation_costs=tuple(r_costs),
        discount=0.8,
    )


def _organ_b() -> ModelConfig:
    group_arrivals = {"O": 0.049, "A": 0.018, "B": 0.018, "AB": 0.063}
    mu = {"high": 0.008, "medium": 0.003, "low": 0.001}
    nu = {"high": 0.0, "medium": 0.0005, "low": 0.005}
    match_rewards = {"high": 1000.0, "medium": 500.0, "low": 100.0}
    departure = {"high": 10.0, "medium": 20.0, "low": 50.0}
    relocation = {"high": 5.0, "medium": 10.0, "low": 0.0}
    donors, recipients = _organ_layout()
    lam = [0.0] * 16
    mus = [0.0] * 16
    nus = [0.0] * 16
    d_costs = [0.0] * 16
    r_costs = [0.0] * 16
    for cls, group in donors.items():
        lam[cls] = group_arrivals[group]
    for cls, (group, urgency) in recipients.items():
        lam[cls] = group_arrivals[group]
        mus[cls] = mu[urgency]
        nus[cls] = nu[urgency]
        d_costs[cls] = departure[urgency]
        r_costs[cls] = relocation[urgency]
    return ModelConfig(
        name="organ_b",
        class_count=16,
        capacity=15,
        arrival_rates=tuple(lam),
        departure_rates=tuple(mus),
        relocation_rates=tuple(nus),
        next_node=tuple(_organ_next_nodes()),
        edges=tuple(_organ_edges(match_rewards)),
        departure_costs=tuple(d_costs),
        relocation_costs=tuple(r_costs),
        discount=0.9,
    )


_BUILDERS = {"diamond": _diamond, "organ_a": _organ_a, "organ_b": _organ_b}
SCENARIO_NAMES = tuple(sorted(_BUILDERS))


def organ_priority_classes() -> frozenset[int]:
    """Default allowed set for the restricted-greedy expert: every class
    except low-urgency recipients."""
    _, recipients = _organ_layout()
    low = {cls for cls, (_, urgency) in recipients.items() if urgency == "low"}
    return frozenset(set(range(16)) - low)


def default_roster(name: str) -> tuple[ExpertId, ...]:
    """Expert roster conventionally used with each built-in scenario."""
    if name == "diamond":
        return (match_longest(), greedy_payoff(), uniform_random())
    if name == "organ_a":
        return (
            match_longest(),
            greedy_payoff(),
            restricted_greedy(organ_priority_classes()),
            uniform_random(),
        )
    if name == "organ_b":
        return (match_longest(), greedy_payoff())
    raise ConfigError(f"unknown scenario name: {name!r}")


def build_scenario(spec: str | dict) -> ModelConfig:
    """Build a configuration from a built-in name or a raw document."""
    if isinstance(spec, str):
        builder = _BUILDERS.get(spec)
        if builder is None:
            raise ConfigError(
                f"unknown scenario name: {spec!r} (expected one of {', '.join(SCENARIO_NAMES)})"
            )
        return builder()
    if isinstance(spec, dict):
        return document_to_config(spec)
    raise ConfigError(f"scenario spec must be a name or a document, got {type(spec).__name__}")


def config_to_document(config: ModelConfig) -> dict:
    return {
        "name": config.name,
        "class_count": config.class_count,
        "capacity": config.capacity,
        "arrival_rates": list(config.arrival_rates),
        "departure_rates": list(config.departure_rates),
        "relocation_rates": list(config.relocation_rates),
        "next_node": list(config.next_node),
        "edges": [[i, j, g] for i, j, g in config.edges],
        "departure_costs": list(config.departure_costs),
        "relocation_costs": list(config.relocation_costs),
        "discount": config.discount,
    }


def document_to_config(document: dict) -> ModelConfig:
    unknown = set(document) - set(_DOCUMENT_FIELDS)
    if unknown:
        raise ConfigError(f"unknown scenario document fields: {sorted(unknown)}")
    missing = set(_DOCUMENT_FIELDS) - set(document)
    if missing:
        raise ConfigError(f"scenario document is missing fields: {sorted(missing)}")
    return ModelConfig(
        name=str(document["name"]),
        class_count=int(document["class_count"]),
        capacity=int(document["capacity"]),
        arrival_rates=tuple(document["arrival_rates"]),
        departure_rates=tuple(document["departure_rates"]),
        relocation_rates=tuple(document["relocation_rates"]),
        next_node=tuple(document["next_node"]),
        edges=tuple(tuple(e) for e in document["edges"]),
        departure_costs=tuple(document["departure_costs"]),
        relocation_costs=tuple(document["relocation_costs"]),
        discount=float(document["discount"]),
    )


def save_scenario(config: ModelConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(config_to_document(config), indent=2) + "\n")


def load_scenario(path: str | Path) -> ModelConfig:
    return document_to_config(json.loads(Path(path).read_text()))
