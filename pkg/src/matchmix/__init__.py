"""Expert-policy orchestration for stochastic online matching."""

from .env import (
    ARRIVAL,
    DEPARTURE,
    ENQUEUE,
    NO_EVENT,
    RELOCATION,
    TRASH,
    Action,
    ConfigError,
    Event,
    IllegalActionError,
    ModelConfig,
    State,
    StateSpaceError,
    TransitionError,
    enumerate_states,
    event_distribution,
    initial_distribution,
    legal_actions,
    match_action,
    reward,
    sample_initial,
    state_key,
    step,
    transition_support,
)
from .experts import (
    ExpertId,
    expert_action,
    greedy_payoff,
    match_longest,
    prospective_matches,
    restricted_greedy,
    sample_expert_action,
    uniform_random,
)
from .orchestrator import (
    EXP_FIXED,
    EXP_VARYING,
    POLYNOMIAL,
    CumulativeAdvantage,
    PotentialSpec,
    WeightTable,
    accumulate_advantage,
    default_poly_degree,
    potential_value,
    sample_and_act,
    update_weights,
    weights_from_cumulative,
)
from .scenarios import (
    SCENARIO_NAMES,
    build_scenario,
    config_to_document,
    default_roster,
    document_to_config,
)

__version__ = "0.1.0"
