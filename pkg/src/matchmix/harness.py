"""Experiment orchestration and empirical guarantee checks.

Monte Carlo policy evaluation, the experiment runner behind the CLI
(learning schemes, baselines, learning curves, CSV/JSON artifacts), the
adversarial regret game against the known potential bounds, the
finite-sample performance bound, the advantage-structure checker, and
the per-expert dominance report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import ModelConfig, State, StateSpaceError, iter_queue_vectors, sample_initial, state_key, step
from .exact import evaluate_mixture, evaluate_policy, value_at_initial
from .experts import ExpertId, sample_expert_action
from .neural import (
    ActorCriticConfig,
    DdqnGreedyPolicy,
    NetParams,
    NeuralAdvantageEstimator,
    actor_critic_loop,
    ddqn_direct,
    critic_advantage,
    featurize,
    gradient_check,
    init_net,
    net_forward,
    net_to_document,
    softmax,
)
from .orchestrator import (
    EXP_FIXED,
    EXP_VARYING,
    POLYNOMIAL,
    PotentialSpec,
    WeightTable,
    sample_and_act,
    weights_from_cumulative,
)
from .scenarios import build_scenario, default_roster
from .tabular import (
    GreedyQPolicy,
    QTable,
    advantage_from_q,
    bias_trace,
    q_learning_baseline,
    tabular_orchestration_loop,
)

__all__ = [
    "ExpertPolicy",
    "MixturePolicy",
    "ActorMixturePolicy",
    "monte_carlo_value",
    "actor_weight_table",
    "ExperimentConfig",
    "ExperimentResult",
    "LearningCurve",
    "run_experiment",
    "RegretCheckResult",
    "adversarial_regret_check",
    "regret_bound",
    "signed_unit_payoffs",
    "theorem_bound",
    "dominance_report",
    "Assumption1Report",
    "check_assumption1",
]

SCHEMES = ("tab-tab", "tab-nn", "nn-nn", "ql", "ddqn-direct")


# ---------------------------------------------------------------------------
# Policies and Monte Carlo evaluation


class ExpertPolicy:
    """A single expert used as a standalone policy."""

    def __init__(self, config: ModelConfig, expert: ExpertId):
        self.config = config
        self.expert = expert

    def act(self, state: State, rng: np.random.Generator):
        return sample_expert_action(self.config, state, self.expert, rng)


class MixturePolicy:
    """Mixture of roster experts under a weight table."""

    def __init__(self, config, weights: WeightTable, roster, epsilon: float = 0.0):
        self.config = config
        self.weights = weights
        self.roster = tuple(roster)
        self.epsilon = epsilon

    def act(self, state: State, rng: np.random.Generator):
        _, action = sample_and_act(self.config, state, self.weights, self.roster, self.epsilon, rng)
        return action


class ActorMixturePolicy:
    """Mixture of roster experts under an actor network."""

    def __init__(self, config, actor: NetParams, roster, feature_mode: str = "default"):
        self.config = config
        self.actor = actor
        self.roster = tuple(roster)
        self.feature_mode = feature_mode

    def act(self, state: State, rng: np.random.Generator):
        x = featurize(
            self.config,
            state if self.feature_mode == "extended" else state_key(state),
            self.feature_mode,
        )
        p = softmax(net_forward(self.actor, x))
        u = rng.random()
        acc = 0.0
        k = len(p) - 1
        for idx in range(len(p) - 1):
            acc += p[idx]
            if u < acc:
                k = idx
                break
        return sample_expert_action(self.config, state, self.roster[k], rng)


def monte_carlo_value(
    config: ModelConfig,
    policy,
    steps: int,
    episodes: int,
    discounted: bool,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Mean and standard error of the episode return under ``policy``.

    Every episode starts from the initial distribution and accumulates
    either the discounted return or the plain cumulative reward over
    ``steps`` decisions.
    """
    if steps < 1 or episodes < 1:
        raise ValueError("steps and episodes must be positive")
    gamma = config.discount
    returns = np.empty(episodes)
    for ep in range(episodes):
        s = sample_initial(config, rng)
        total = 0.0
        weight = 1.0
        for _ in range(steps):
            a = policy.act(s, rng)
            s, r = step(config, s, a, rng)
            total += weight * r
            if discounted:
                weight *= gamma
        returns[ep] = total
    stderr = float(returns.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else 0.0
    return float(returns.mean()), stderr


def actor_weight_table(
    config: ModelConfig, actor: NetParams, feature_mode: str = "default", cap: int = 10**6
) -> WeightTable:
    """Materialize an actor's distribution over every queue vector."""
    n_keys = (config.capacity + 1) ** config.class_count
    if n_keys > cap:
        raise StateSpaceError(f"{n_keys} queue vectors exceed the cap of {cap}")
    keys = list(iter_queue_vectors(config))
    x = np.stack([featurize(config, key, "default") for key in keys])
    probs = softmax(net_forward(actor, x))
    n_experts = probs.shape[1]
    table = WeightTable(n_experts)
    for key, p in zip(keys, probs):
        table.set_for_key(key, p / p.sum())
    if feature_mode != "default":
        raise ValueError("only queue-feature actors can be materialized per key")
    return table


# ---------------------------------------------------------------------------
# Experiment configuration and runner


_EXPERT_TOKENS = {
    "pi1": "match-longest",
    "pi2": "greedy-payoff",
    "pi3": "restricted-greedy",
    "pi4": "uniform-random",
}


def _resolve_roster(config_name, roster_spec) -> tuple[ExpertId, ...]:
    if roster_spec is None:
        return default_roster(config_name)
    resolved = []
    defaults = {e.kind: e for e in default_roster(config_name)} if config_name else {}
    for item in roster_spec:
        if isinstance(item, ExpertId):
            resolved.append(item)
            continue
        if isinstance(item, dict):
            allowed = item.get("allowed_classes")
            resolved.append(
                ExpertId(item["kind"], frozenset(allowed) if allowed is not None else None)
            )
            continue
        kind = _EXPERT_TOKENS.get(item, item)
        if kind == "restricted-greedy":
            if kind not in defaults:
                raise ValueError(
                    "restricted-greedy needs an allowed class set; "
                    "pass {'kind': 'restricted-greedy', 'allowed_classes': [...]}"
                )
            resolved.append(defaults[kind])
        else:
            resolved.append(ExpertId(kind))
    return tuple(resolved)


def _resolve_potential(spec) -> PotentialSpec:
    if isinstance(spec, PotentialSpec):
        return spec
    if spec is None:
        return PotentialSpec.exponential_varying(0.3)
    if isinstance(spec, dict):
        return PotentialSpec(spec["kind"], float(spec["param"]))
    raise ValueError(f"cannot interpret potential spec {spec!r}")


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    scenario: str | dict = "diamond"
    scheme: str = "tab-tab"
    roster: list | None = None
    potential: dict | PotentialSpec | None = None
    updates: int = 50
    horizon: int = 15
    runs: int = 20
    seed: int = 0
    alpha: float = 0.05
    epsilon: float = 0.0
    warm_start: bool = True
    eval_every: int = 1
    evaluation: dict = field(
        default_factory=lambda: {"mode": "exact"}
    )
    ql: dict = field(
        default_factory=lambda: {"alpha0": 1e-6, "epsilon0": 0.3, "decay": 0.8}
    )
    nn: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")

    def to_document(self) -> dict:
        doc = {
            "scenario": self.scenario,
            "scheme": self.scheme,
            "roster": self.roster,
            "potential": None,
            "updates": self.updates,
            "horizon": self.horizon,
            "runs": self.runs,
            "seed": self.seed,
            "alpha": self.alpha,
            "epsilon": self.epsilon,
            "warm_start": self.warm_start,
            "eval_every": self.eval_every,
            "evaluation": self.evaluation,
            "ql": self.ql,
            "nn": self.nn,
        }
        potential = _resolve_potential(self.potential)
        doc["potential"] = {"kind": potential.kind, "param": potential.param}
        return doc

    @classmethod
    def from_document(cls, document: dict) -> "ExperimentConfig":
        return cls(**document)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_document(json.loads(Path(path).read_text()))


@dataclass
class LearningCurve:
    """Per-(run, t) value estimates with cross-run aggregation."""

    points: list = field(default_factory=list)  # (run, t, value, stderr)

    def add(self, run: int, t: int, value: float, stderr: float = 0.0) -> None:
        self.points.append((run, t, value, stderr))

    def aggregate(self) -> list[tuple[int, float, float]]:
        by_t: dict[int, list[float]] = {}
        for _, t, value, _ in self.points:
            by_t.setdefault(t, []).append(value)
        out = []
        for t in sorted(by_t):
            values = np.asarray(by_t[t])
            stderr = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
            out.append((t, float(values.mean()), stderr))
        return out

    def final(self) -> tuple[int, float, float]:
        return self.aggregate()[-1]

    def to_csv(self, path) -> None:
        lines = ["run,t,value,stderr"]
        for run, t, value, stderr in sorted(self.points):
            lines.append(f"{run},{t},{value!r},{stderr!r}")
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curve: LearningCurve
    summary: dict
    artifacts: list  # (name, json document)

    def save(self, outdir) -> None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        self.curve.to_csv(out / "curve.csv")
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        if self.artifacts:
            art = out / "artifacts"
            art.mkdir(exist_ok=True)
            for name, document in self.artifacts:
                (art / name).write_text(json.dumps(document) + "\n")


def _eval_points(n_updates: int, every: int) -> list[int]:
    points = sorted({0, n_updates, *range(every, n_updates + 1, every)})
    return points


def _preflight_exact(config: ModelConfig) -> None:
    variants = 1 + sum(1 for r in config.arrival_rates if r > 0)
    variants += sum(1 for r in config.departure_rates if r > 0)
    variants += sum(1 for r in config.relocation_rates if r > 0)
    total = (config.capacity + 1) ** config.class_count * variants
    if total > 10**6:
        raise StateSpaceError(
            f"exact evaluation needs an enumerable scenario; this one has up to {total} states"
        )


def _evaluate_snapshot(config, policy_kind, payload, roster, evaluation, rng):
    """Value of one snapshot under the configured evaluation mode."""
    mode = evaluation.get("mode", "exact")
    if mode == "exact":
        if policy_kind == "weights":
            ev = evaluate_mixture(config, payload, roster)
            return value_at_initial(config, ev.value), 0.0
        if policy_kind == "actor":
            table = actor_weight_table(config, payload)
            ev = evaluate_mixture(config, table, roster)
            return value_at_initial(config, ev.value), 0.0
        # greedy tabular/ddqn policies expose action_distribution
        table = evaluate_policy(config, payload.action_distribution)
        return value_at_initial(config, table), 0.0
    if mode != "monte-carlo":
        raise ValueError(f"unknown evaluation mode {mode!r}")
    episodes = int(evaluation.get("episodes", 1000))
    steps = int(evaluation.get("steps", 200))
    discounted = bool(evaluation.get("discounted", True))
    if policy_kind == "weights":
        policy = MixturePolicy(config, payload, roster)
    elif policy_kind == "actor":
        policy = ActorMixturePolicy(config, payload, roster)
    else:
        policy = payload
    return monte_carlo_value(config, policy, steps, episodes, discounted, rng)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run one experiment: N seeded runs, per-snapshot values, artifacts.

    Learning schemes report the policy-update index on the t axis;
    baselines report the estimation-update budget (multiples of the
    horizon) so curves can be compared at matched cost.
    """
    config = build_scenario(cfg.scenario)
    scenario_name = config.name
    roster = _resolve_roster(scenario_name, cfg.roster)
    potential = _resolve_potential(cfg.potential)
    if cfg.evaluation.get("mode", "exact") == "exact":
        _preflight_exact(config)

    curve = LearningCurve()
    artifacts = []
    master = np.random.SeedSequence(cfg.seed)
    run_seeds = master.spawn(cfg.runs)
    points = _eval_points(cfg.updates, cfg.eval_every)

    for run_id, seed in enumerate(run_seeds):
        train_rng, eval_rng = [np.random.default_rng(s) for s in seed.spawn(2)]
        snapshots: list[tuple[int, str, object]] = []
        if cfg.scheme in ("tab-tab", "tab-nn"):
            source = None
            if cfg.scheme == "tab-nn":
                source = NeuralAdvantageEstimator(
                    config,
                    roster,
                    cfg.horizon,
                    hyper=ActorCriticConfig(**cfg.nn) if cfg.nn else None,
                    init_rng=np.random.default_rng(seed.spawn(3)[2]),
                )
            run = tabular_orchestration_loop(
                config,
                roster,
                potential,
                cfg.updates,
                cfg.horizon,
                cfg.alpha,
                train_rng,
                epsilon=cfg.epsilon,
                warm_start=cfg.warm_start,
                advantage_source=source,
            )
            for t in points:
                snapshots.append((t, "weights", run.snapshots[t]))
            artifacts.append(
                (f"run-{run_id:03d}-weights.json", run.snapshots[-1].to_document())
            )
        elif cfg.scheme == "nn-nn":
            hyper = ActorCriticConfig(**cfg.nn) if cfg.nn else None
            run = actor_critic_loop(
                config, roster, potential, cfg.updates, cfg.horizon, train_rng, hyper=hyper
            )
            for t in points:
                snapshots.append((t, "actor", run.snapshots[t]))
            artifacts.append((f"run-{run_id:03d}-actor.json", net_to_document(run.actor)))
        elif cfg.scheme == "ql":
            budget = cfg.updates * cfg.horizon
            checkpoints = [t * cfg.horizon for t in points if t > 0]
            run = q_learning_baseline(
                config,
                "primitive",
                budget,
                float(cfg.ql.get("alpha0", 1e-6)),
                float(cfg.ql.get("epsilon0", 0.3)),
                float(cfg.ql.get("decay", 0.8)),
                train_rng,
                checkpoints=checkpoints,
            )
            snapshots.append((0, "greedy", GreedyQPolicy(config, QTable(len(config.edges) + 2, 0.1, config.discount))))
            for c in checkpoints:
                snapshots.append((c, "greedy", GreedyQPolicy(config, run.checkpoints[c])))
        elif cfg.scheme == "ddqn-direct":
            budget = cfg.updates * cfg.horizon
            checkpoints = [t * cfg.horizon for t in points if t > 0]
            hyper = ActorCriticConfig(**{"feature_mode": "extended", **cfg.nn})
            run = ddqn_direct(
                config,
                budget,
                float(cfg.ql.get("epsilon0", 0.3)),
                float(cfg.ql.get("decay", 0.8)),
                train_rng,
                hyper=hyper,
                checkpoints=checkpoints,
            )
            init = init_net(
                [len(featurize(config, sample_initial(config, np.random.default_rng(0)), hyper.feature_mode)), *hyper.hidden, len(config.edges) + 2],
                np.random.default_rng(seed.spawn(3)[2]),
            )
            snapshots.append((0, "greedy", DdqnGreedyPolicy(config, init, hyper.feature_mode)))
            for c in checkpoints:
                snapshots.append(
                    (c, "greedy", DdqnGreedyPolicy(config, run.checkpoints[c], hyper.feature_mode))
                )
        else:  # pragma: no cover - guarded by ExperimentConfig
            raise ValueError(f"unknown scheme {cfg.scheme!r}")

        for t, kind, payload in snapshots:
            value, stderr = _evaluate_snapshot(config, kind, payload, roster, cfg.evaluation, eval_rng)
            curve.add(run_id, t, value, stderr)

    final_t, final_mean, final_stderr = curve.final()
    summary = {
        "config": cfg.to_document(),
        "x_axis": "policy_updates" if cfg.scheme in ("tab-tab", "tab-nn", "nn-nn") else "td_updates",
        "aggregate": [
            {"t": t, "mean": mean, "stderr": stderr} for t, mean, stderr in curve.aggregate()
        ],
        "final": {"t": final_t, "mean": final_mean, "stderr": final_stderr},
    }
    return ExperimentResult(cfg, curve, summary, artifacts)


# ---------------------------------------------------------------------------
# Regret, performance bounds, structure checks


def signed_unit_payoffs(t: int, n_experts: int, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform +-1 payoffs, the default adversary."""
    return rng.choice((-1.0, 1.0), size=n_experts)


def regret_bound(potential: PotentialSpec, horizon: int, n_experts: int) -> float:
    """Adversarial regret bound of the potential for payoffs in [-1, 1].

    Polynomial bound assumes the 2 ln K degree tuning; the varying-rate
    exponential uses the (eta0 + 1/eta0) sqrt(T ln K) tuning bound.
    """
    log_k = math.log(n_experts)
    if potential.kind == POLYNOMIAL:
        return math.sqrt(6.0 * horizon * log_k)
    if potential.kind == EXP_FIXED:
        return log_k / potential.param + potential.param * horizon / 2.0
    eta0 = potential.param
    return (eta0 + 1.0 / eta0) * math.sqrt(horizon * log_k)


@dataclass
class RegretCheckResult:
    max_regret: float
    bound: float
    passed: bool
    trials: int
    violations: int


def adversarial_regret_check(
    potential: PotentialSpec,
    horizon: int,
    n_experts: int,
    payoff_generator=signed_unit_payoffs,
    trials: int = 1000,
    rng: np.random.Generator | None = None,
) -> RegretCheckResult:
    """Play the expert-advice game and compare regret to the known bound.

    Each round weights come from the accumulated advantage vector
    (payoff minus the mixture payoff), the adversary reveals a payoff
    vector in [-1, 1]^K, and the regret after T rounds is the largest
    accumulated advantage.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = regret_bound(potential, horizon, n_experts)
    worst = -math.inf
    violations = 0
    for _ in range(trials):
        cumulative = np.zeros(n_experts)
        for t in range(1, horizon + 1):
            weights = weights_from_cumulative(potential, t, cumulative)
            payoff = np.asarray(payoff_generator(t, n_experts, rng), dtype=float)
            if (np.abs(payoff) > 1.0 + 1e-12).any():
                raise ValueError("payoffs must lie in [-1, 1]")
            cumulative += payoff - float(weights @ payoff)
        regret = float(cumulative.max())
        worst = max(worst, regret)
        if regret > bound:
            violations += 1
    return RegretCheckResult(worst, bound, violations == 0, trials, violations)


def theorem_bound(
    epsilon_bias: float, gamma: float, horizon: int, adversarial_bound: float, delta: float | None = None
) -> float:
    """Average performance gap bound for biased-advantage orchestration.

    ``epsilon_bias / (1 - gamma)`` plus the adversarial bound spread
    over the horizon, plus the high-probability addend when ``delta``
    is given.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    value = epsilon_bias / (1.0 - gamma) + adversarial_bound / ((1.0 - gamma) ** 2 * horizon)
    if delta is not None:
        value += 2.0 * math.log(1.0 / delta) / ((1.0 - gamma) ** 2 * math.sqrt(horizon))
    return value


def dominance_report(weights: WeightTable, n_experts: int | None = None) -> np.ndarray:
    """Fraction of materialized keys on which each expert carries the
    largest weight (ties go to the smallest expert index)."""
    if len(weights) == 0:
        raise ValueError("empty weight table")
    k = n_experts if n_experts is not None else weights.n_experts
    counts = np.zeros(k)
    for _, probs in weights.items():
        counts[int(np.argmax(probs))] += 1
    return counts / counts.sum()


@dataclass
class Assumption1Report:
    samples: int
    max_weighted_sum: float
    envelope_violations: int
    max_envelope_ratio: float

    @property
    def passed(self) -> bool:
        return self.max_weighted_sum <= 1e-9 and self.envelope_violations == 0


def check_assumption1(
    samples: int, rng: np.random.Generator, gamma: float = 0.8
) -> Assumption1Report:
    """Structure of constructed advantages: weighted zero-sum and envelope.

    Half of the constructions are tabular (Q rows drawn inside the
    normalized [0, 1/(1-gamma)] envelope), half neural (random critics;
    their outputs are affinely rescaled into the same envelope before
    centering). Both routes must give advantages that sum to zero under
    the mixture weights and stay inside the 1/(1-gamma) envelope.
    """
    envelope = 1.0 / (1.0 - gamma)
    max_sum = 0.0
    violations = 0
    max_ratio = 0.0

    n_tabular = samples // 2
    table = QTable(0, 0.1, gamma)  # placeholder; rebuilt per block below
    weights = WeightTable(1)
    block = 0
    for i in range(n_tabular):
        if i % 1000 == 0:
            block = int(rng.integers(2, 6))
            table = QTable(block, 0.1, gamma)
            weights = WeightTable(block)
        key = ("s", i)
        table.entry(key)[:] = rng.uniform(0.0, envelope, size=block)
        weights.set_for_key(key, rng.dirichlet(np.ones(block)))
        adv = advantage_from_q(table, weights, key)
        max_sum = max(max_sum, abs(float(weights.probs_for_key(key) @ adv)))
        ratio = float(np.abs(adv).max()) / envelope
        max_ratio = max(max_ratio, ratio)
        if ratio > 1.0 + 1e-12:
            violations += 1

    n_neural = samples - n_tabular
    net = None
    n_out = 3
    for i in range(n_neural):
        if net is None or i % 500 == 0:
            n_out = int(rng.integers(2, 6))
            net = init_net([4, 16, 16, n_out], rng)
        x = rng.uniform(0.0, 1.0, size=4)
        q_raw = net_forward(net, x)
        spread = float(q_raw.max() - q_raw.min())
        if spread <= 0.0:
            q_scaled = np.zeros_like(q_raw)
        else:
            q_scaled = (q_raw - q_raw.min()) / spread * envelope
        probs = rng.dirichlet(np.ones(n_out))
        adv = q_scaled - float(probs @ q_scaled)
        max_sum = max(max_sum, abs(float(probs @ adv)))
        # the centered critic output route must satisfy the same structure
        centered = critic_advantage(NetParams([w.copy() for w in net.weights], [b.copy() for b in net.biases]), probs, x)
        max_sum = max(max_sum, abs(float(probs @ centered)) / max(1.0, float(np.abs(q_raw).max())))
        ratio = float(np.abs(adv).max()) / envelope
        max_ratio = max(max_ratio, ratio)
        if ratio > 1.0 + 1e-12:
            violations += 1
    return Assumption1Report(samples, max_sum, violations, max_ratio)
