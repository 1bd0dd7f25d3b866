"""From-scratch feedforward networks and the neural orchestration loop.

Networks are two ReLU hidden layers plus a linear output head of width
K, trained with bias-corrected Adam and a per-step multiplicative
learning-rate decay. The critic estimates per-expert Q values from
state features (DQN-style, with an optional periodically synchronized
target network); the actor emits expert logits and is pulled toward the
potential-based target distribution with a KL loss. Everything is plain
numpy; gradients come from hand-written reverse accumulation and can be
checked against central finite differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import EVENT_KINDS, ModelConfig, State, sample_initial, state_key, step
from .experts import ExpertId, sample_expert_action
from .orchestrator import (
    EXP_FIXED,
    EXP_VARYING,
    POLYNOMIAL,
    CumulativeAdvantage,
    PotentialSpec,
    WeightTable,
    sample_and_act,
    varying_rate,
    weights_from_cumulative,
)
from .tabular import unit_reward_map

__all__ = [
    "NetParams",
    "init_net",
    "net_forward",
    "softmax",
    "actor_distribution",
    "AdamState",
    "init_adam",
    "net_train_step",
    "gradient_check",
    "featurize",
    "feature_length",
    "ReplayBuffer",
    "CriticTrainer",
    "critic_advantage",
    "actor_target",
    "ActorCriticConfig",
    "ActorCriticRun",
    "actor_critic_loop",
    "NeuralAdvantageEstimator",
    "DdqnGreedyPolicy",
    "DdqnRun",
    "ddqn_direct",
    "selector_from_weights",
    "selector_from_actor",
    "net_to_document",
    "net_from_document",
    "save_net",
    "load_net",
]


@dataclass
class NetParams:
    """Weights and biases of a fully connected ReLU network."""

    weights: list
    biases: list

    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "NetParams":
        return NetParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])


def init_net(sizes, rng: np.random.Generator) -> NetParams:
    """Uniform init scaled by 1/sqrt(fan-in) for weights and biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return NetParams(weights, biases)


def net_forward(params: NetParams, x) -> np.ndarray:
    """Forward pass; accepts a single feature vector or a batch."""
    a = np.asarray(x, dtype=float)
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w + b
        if layer < last:
            a = np.maximum(a, 0.0)
    return a


def _forward_cache(params: NetParams, x: np.ndarray):
    activations = [x]
    a = x
    last = len(params.weights) - 1
    for layer, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w + b
        if layer < last:
            a = np.maximum(a, 0.0)
        activations.append(a)
    return a, activations


def _backward(params: NetParams, activations, d_out: np.ndarray):
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    delta = d_out
    for layer in range(len(params.weights) - 1, -1, -1):
        a_prev = activations[layer]
        grads_w[layer] = a_prev.T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ params.weights[layer].T) * (activations[layer] > 0.0)
    return grads_w, grads_b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def actor_distribution(params: NetParams, x) -> np.ndarray:
    """Expert distribution of an actor network: softmax of its logits."""
    return softmax(net_forward(params, x))


def _loss_and_grad(out: np.ndarray, targets: np.ndarray, loss: str):
    n = out.shape[0]
    if loss == "squared":
        err = out - targets
        return float((err**2).sum() / n), 2.0 * err / n
    if loss == "kl":
        p = softmax(out)
        safe = np.where(targets > 0.0, targets, 1.0)
        logp = out - out.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        value = float((targets * (np.log(safe) - logp)).sum() / n)
        return value, (p - targets) / n
    raise ValueError(f"unknown loss kind: {loss!r}")


@dataclass
class AdamState:
    """Moment accumulators plus the decaying learning rate."""

    m_weights: list
    m_biases: list
    v_weights: list
    v_biases: list
    lr: float
    lr_decay: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: NetParams, lr: float, lr_decay: float = 1.0) -> AdamState:
    return AdamState(
        m_weights=[np.zeros_like(w) for w in params.weights],
        m_biases=[np.zeros_like(b) for b in params.biases],
        v_weights=[np.zeros_like(w) for w in params.weights],
        v_biases=[np.zeros_like(b) for b in params.biases],
        lr=lr,
        lr_decay=lr_decay,
    )


def _adam_update(theta, g, m, v, adam: AdamState):
    m *= adam.beta1
    m += (1.0 - adam.beta1) * g
    v *= adam.beta2
    v += (1.0 - adam.beta2) * g * g
    m_hat = m / (1.0 - adam.beta1**adam.step)
    v_hat = v / (1.0 - adam.beta2**adam.step)
    theta -= adam.lr * m_hat / (np.sqrt(v_hat) + adam.eps)


def net_train_step(
    params: NetParams, adam: AdamState, xs, targets, loss: str = "squared"
) -> float:
    """One Adam step on the batch-mean loss; mutates params and adam.

    The learning rate decays multiplicatively after the step. Raises on
    a non-finite loss or gradient.
    """
    x = np.atleast_2d(np.asarray(xs, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    out, activations = _forward_cache(params, x)
    value, d_out = _loss_and_grad(out, t, loss)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite {loss} loss: {value}")
    grads_w, grads_b = _backward(params, activations, d_out)
    for g in grads_w + grads_b:
        if not np.isfinite(g).all():
            raise FloatingPointError("non-finite gradient")
    adam.step += 1
    for w, g, m, v in zip(params.weights, grads_w, adam.m_weights, adam.v_weights):
        _adam_update(w, g, m, v, adam)
    for b, g, m, v in zip(params.biases, grads_b, adam.m_biases, adam.v_biases):
        _adam_update(b, g, m, v, adam)
    adam.lr *= adam.lr_decay
    return value


def gradient_check(
    params: NetParams, xs, targets, loss: str = "squared", h: float = 1e-5
) -> float:
    """Max relative error between analytic and central-difference gradients."""
    x = np.atleast_2d(np.asarray(xs, dtype=float))
    t = np.atleast_2d(np.asarray(targets, dtype=float))
    out, activations = _forward_cache(params, x)
    _, d_out = _loss_and_grad(out, t, loss)
    grads_w, grads_b = _backward(params, activations, d_out)
    analytic = np.concatenate([g.ravel() for g in grads_w + grads_b])

    tensors = params.weights + params.biases
    numeric = np.empty_like(analytic)
    pos = 0
    for tensor in tensors:
        flat = tensor.ravel()
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            up, _ = _loss_and_grad(net_forward(params, x), t, loss)
            flat[i] = original - h
            down, _ = _loss_and_grad(net_forward(params, x), t, loss)
            flat[i] = original
            numeric[pos] = (up - down) / (2.0 * h)
            pos += 1
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float((np.abs(analytic - numeric) / scale).max())


def feature_length(config: ModelConfig, mode: str = "default") -> int:
    if mode == "default":
        return config.class_count
    if mode == "extended":
        return 2 * config.class_count + len(EVENT_KINDS)
    raise ValueError(f"unknown feature mode: {mode!r}")


def featurize(config: ModelConfig, key_or_state, mode: str = "default") -> np.ndarray:
    """State features: queue occupancies scaled by capacity.

    Extended mode appends a one-hot of the event class and of the event
    kind and therefore needs a full state, not just a queue key.
    """
    if isinstance(key_or_state, State):
        queues = key_or_state.queues
        event = key_or_state.event
    else:
        queues = tuple(key_or_state)
        event = None
    base = np.asarray(queues, dtype=float) / config.capacity
    if mode == "default":
        return base
    if mode != "extended":
        raise ValueError(f"unknown feature mode: {mode!r}")
    if event is None:
        raise ValueError("extended features need a full state with its event")
    cls_onehot = np.zeros(config.class_count)
    if event.cls >= 0:
        cls_onehot[event.cls] = 1.0
    kind_onehot = np.zeros(len(EVENT_KINDS))
    kind_onehot[EVENT_KINDS.index(event.kind)] = 1.0
    return np.concatenate([base, cls_onehot, kind_onehot])


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int, feature_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.x = np.zeros((capacity, feature_dim))
        self.x_next = np.zeros((capacity, feature_dim))
        self.k = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.keys: list = [None] * capacity
        self.keys_next: list = [None] * capacity
        self.inserted = 0

    @property
    def size(self) -> int:
        return min(self.inserted, self.capacity)

    def __len__(self) -> int:
        return self.size

    def push(self, x, key, k, r, x_next, key_next) -> None:
        slot = self.inserted % self.capacity
        self.x[slot] = x
        self.x_next[slot] = x_next
        self.k[slot] = k
        self.r[slot] = r
        self.keys[slot] = key
        self.keys_next[slot] = key_next
        self.inserted += 1

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size < 1:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "x": self.x[idx],
            "x_next": self.x_next[idx],
            "k": self.k[idx],
            "r": self.r[idx],
            "keys": [self.keys[i] for i in idx],
            "keys_next": [self.keys_next[i] for i in idx],
        }


def _rowwise_draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])
    cum = probs.cumsum(axis=1)
    return np.minimum((cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def selector_from_weights(weights: WeightTable):
    """Expert-selector over next states backed by a tabular weight table."""

    def select(keys, xs):
        return np.stack([weights.probs_for_key(key) for key in keys])

    return select


def selector_from_actor(actor: NetParams, epsilon: float = 0.0):
    """Expert-selector over next states backed by an actor network.

    With exploration the selector is the behavior mixture
    ``(1 - eps) * softmax(actor) + eps / K``, matching the distribution
    the transitions were actually collected under.
    """

    def select(keys, xs):
        p = softmax(net_forward(actor, xs))
        if epsilon > 0.0:
            p = (1.0 - epsilon) * p + epsilon / p.shape[-1]
        return p

    return select


class CriticTrainer:
    """DQN-style trainer for the per-expert Q network.

    ``plain`` mode bootstraps from a detached copy of the online
    parameters; ``double`` mode keeps a separate target network that is
    synchronized every ``sync_period`` updates. The squared-error loss
    touches only the output component of the expert taken in each
    sampled transition.
    """

    def __init__(
        self,
        params: NetParams,
        gamma: float,
        lr: float,
        lr_decay: float = 1.0,
        batch_size: int = 64,
        sync_period: int = 100,
        mode: str = "double",
    ):
        if mode not in ("plain", "double"):
            raise ValueError(f"unknown critic mode: {mode!r}")
        self.online = params
        self.target = params.copy() if mode == "double" else None
        self.adam = init_adam(params, lr, lr_decay)
        self.gamma = gamma
        self.batch_size = batch_size
        self.sync_period = sync_period
        self.mode = mode
        self.updates = 0
        self.last_loss = float("nan")

    def target_net(self) -> NetParams:
        return self.target if self.target is not None else self.online

    def update(self, buffer: ReplayBuffer, selector, rng: np.random.Generator) -> bool:
        """One minibatch update; returns False while the buffer is short."""
        if buffer.size < self.batch_size:
            return False
        batch = buffer.sample(self.batch_size, rng)
        probs_next = selector(batch["keys_next"], batch["x_next"])
        k_next = _rowwise_draw(probs_next, rng)
        q_next = net_forward(self.target_net(), batch["x_next"])
        rows = np.arange(self.batch_size)
        targets_k = batch["r"] + self.gamma * q_next[rows, k_next]
        prediction = net_forward(self.online, batch["x"])
        targets = prediction.copy()
        targets[rows, batch["k"]] = targets_k
        self.last_loss = net_train_step(self.online, self.adam, batch["x"], targets, "squared")
        self.updates += 1
        if self.target is not None and self.updates % self.sync_period == 0:
            self.target = self.online.copy()
        return True


def critic_advantage(params: NetParams, probs, x) -> np.ndarray:
    """Advantages from a critic: Q-hat minus its selector-weighted mean."""
    q = net_forward(params, x)
    p = np.asarray(probs, dtype=float)
    v = (p * q).sum(axis=-1, keepdims=q.ndim > 1)
    return q - v


def actor_target(
    potential: PotentialSpec,
    t: int,
    probs: np.ndarray,
    advantage: np.ndarray,
    cumulative: np.ndarray | None = None,
) -> np.ndarray:
    """Target expert distribution for one actor update.

    Exponential potentials use the telescoped incremental form
    ``p_k * exp(eta_t * A_k)`` (renormalized), which reproduces the
    one-shot potential of the summed advantages. The polynomial
    potential has no such telescoping and needs the cumulative
    advantage vector instead.
    """
    if potential.kind == POLYNOMIAL:
        if cumulative is None:
            raise ValueError("the polynomial potential needs cumulative advantages")
        return weights_from_cumulative(potential, t, cumulative)
    a = np.asarray(advantage, dtype=float)
    eta = potential.param if potential.kind == EXP_FIXED else varying_rate(potential.param, a.shape[0], t)
    w = np.asarray(probs, dtype=float) * np.exp(eta * (a - a.max()))
    return w / w.sum()


@dataclass
class ActorCriticConfig:
    """Hyperparameters of the neural orchestration loop.

    The defaults are the smallest settings that pass the oracle checks
    on the four-class scenario: 64-unit hidden layers, batch 64, a
    10^4-transition buffer, and a 100-update target sync.
    """

    hidden: tuple[int, ...] = (64, 64)
    critic_lr: float = 0.02
    critic_lr_decay: float = 0.9995
    actor_lr: float = 0.02
    actor_lr_decay: float = 0.999
    batch_size: int = 64
    actor_batch: int | None = None  # defaults to batch_size
    actor_warmup: int = 0  # episodes before the first actor update
    critic_updates_per_step: int = 1
    buffer_capacity: int = 10_000
    sync_period: int = 50
    critic_mode: str = "double"
    epsilon: float = 0.0
    epsilon_decay: float = 1.0  # multiplicative, applied per episode
    feature_mode: str = "default"
    # incremental multiplies the actor's own probabilities (exact for
    # exponential potentials by telescoping); cumulative recomputes the
    # potential of the summed advantages per key and can revive an
    # expert the actor has saturated away from
    target_mode: str = "incremental"


@dataclass
class ActorCriticRun:
    actor: NetParams
    snapshots: list
    critic: CriticTrainer
    buffer: ReplayBuffer


def actor_critic_loop(
    config: ModelConfig,
    roster: tuple[ExpertId, ...],
    potential: PotentialSpec,
    episodes: int,
    horizon: int,
    rng: np.random.Generator,
    hyper: ActorCriticConfig | None = None,
    reward_map="auto",
) -> ActorCriticRun:
    """Actor-critic orchestration with a neural policy and neural critic.

    Each episode resets to the initial distribution and runs ``horizon``
    steps: the actor's softmax picks an expert (optionally epsilon-
    mixed), the expert picks the action, the transition lands in the
    replay buffer, and the critic takes one update. After the episode a
    minibatch is scored by the critic, turned into target distributions
    through the potential, and the actor takes one KL step toward them.
    Actor snapshots are kept per episode for later evaluation.
    """
    hyper = hyper or ActorCriticConfig()
    roster = tuple(roster)
    n_experts = len(roster)
    if reward_map == "auto":
        reward_map = unit_reward_map(config)
    scale, shift = reward_map if reward_map is not None else (1.0, 0.0)
    dim = feature_length(config, hyper.feature_mode)

    actor = init_net([dim, *hyper.hidden, n_experts], rng)
    actor_adam = init_adam(actor, hyper.actor_lr, hyper.actor_lr_decay)
    critic = CriticTrainer(
        init_net([dim, *hyper.hidden, n_experts], rng),
        gamma=config.discount,
        lr=hyper.critic_lr,
        lr_decay=hyper.critic_lr_decay,
        batch_size=hyper.batch_size,
        sync_period=hyper.sync_period,
        mode=hyper.critic_mode,
    )
    buffer = ReplayBuffer(hyper.buffer_capacity, dim)
    cumulative = CumulativeAdvantage(n_experts)
    epsilon = hyper.epsilon
    snapshots = [actor.copy()]

    def selector(keys, xs):
        p = softmax(net_forward(actor, xs))
        if epsilon > 0.0:
            p = (1.0 - epsilon) * p + epsilon / n_experts
        return p

    for t in range(1, episodes + 1):
        s = sample_initial(config, rng)
        x = featurize(config, s if hyper.feature_mode == "extended" else state_key(s), hyper.feature_mode)
        for _ in range(horizon):
            p = softmax(net_forward(actor, x))
            if epsilon > 0.0 and rng.random() < epsilon:
                k = int(rng.integers(n_experts))
            else:
                k = int(_rowwise_draw(p[None, :], rng)[0])
            a = sample_expert_action(config, s, roster[k], rng)
            s2, r = step(config, s, a, rng)
            x2 = featurize(config, s2 if hyper.feature_mode == "extended" else state_key(s2), hyper.feature_mode)
            buffer.push(x, state_key(s), k, scale * r + shift, x2, state_key(s2))
            for _ in range(hyper.critic_updates_per_step):
                critic.update(buffer, selector, rng)
            s, x = s2, x2

        actor_batch = hyper.actor_batch or hyper.batch_size
        if buffer.size >= actor_batch and t > hyper.actor_warmup:
            batch = buffer.sample(actor_batch, rng)
            probs = softmax(net_forward(actor, batch["x"]))
            if epsilon > 0.0:
                # tilt the behavior mixture, not the raw actor output, so
                # exploration keeps every expert's target revivable
                probs = (1.0 - epsilon) * probs + epsilon / n_experts
            advantages = critic_advantage(critic.online, probs, batch["x"])
            targets = np.empty_like(probs)
            use_cumulative = potential.kind == POLYNOMIAL or hyper.target_mode == "cumulative"
            for i, key in enumerate(batch["keys"]):
                if use_cumulative:
                    cumulative.add(key, advantages[i])
                    targets[i] = weights_from_cumulative(potential, t + 1, cumulative.get(key))
                else:
                    targets[i] = actor_target(potential, t, probs[i], advantages[i])
            net_train_step(actor, actor_adam, batch["x"], targets, "kl")
        snapshots.append(actor.copy())
    return ActorCriticRun(actor, snapshots, critic, buffer)


class NeuralAdvantageEstimator:
    """Advantage source for the tabular loop backed by a neural critic.

    Keeps a persistent replay buffer and critic across rounds; each call
    collects ``horizon`` transitions under the given mixture weights,
    trains the critic along the way, and returns critic advantages for
    the keys visited in the round.
    """

    def __init__(
        self,
        config: ModelConfig,
        roster: tuple[ExpertId, ...],
        horizon: int,
        hyper: ActorCriticConfig | None = None,
        reward_map="auto",
        init_rng: np.random.Generator | None = None,
    ):
        self.config = config
        self.roster = tuple(roster)
        self.horizon = horizon
        self.hyper = hyper or ActorCriticConfig()
        if reward_map == "auto":
            reward_map = unit_reward_map(config)
        self.scale, self.shift = reward_map if reward_map is not None else (1.0, 0.0)
        dim = feature_length(config, "default")
        rng = init_rng if init_rng is not None else np.random.default_rng(0)
        self.critic = CriticTrainer(
            init_net([dim, *self.hyper.hidden, len(self.roster)], rng),
            gamma=config.discount,
            lr=self.hyper.critic_lr,
            lr_decay=self.hyper.critic_lr_decay,
            batch_size=self.hyper.batch_size,
            sync_period=self.hyper.sync_period,
            mode=self.hyper.critic_mode,
        )
        self.buffer = ReplayBuffer(self.hyper.buffer_capacity, dim)

    def __call__(self, weights: WeightTable, rng: np.random.Generator) -> dict:
        selector = selector_from_weights(weights)
        s = sample_initial(self.config, rng)
        visited = set()
        for _ in range(self.horizon):
            k, a = sample_and_act(self.config, s, weights, self.roster, self.hyper.epsilon, rng)
            s2, r = step(self.config, s, a, rng)
            key, key2 = state_key(s), state_key(s2)
            self.buffer.push(
                featurize(self.config, key),
                key,
                k,
                self.scale * r + self.shift,
                featurize(self.config, key2),
                key2,
            )
            for _ in range(self.hyper.critic_updates_per_step):
                self.critic.update(self.buffer, selector, rng)
            visited.add(key)
            s = s2
        advantages = {}
        for key in visited:
            probs = weights.probs_for_key(key)
            advantages[key] = critic_advantage(
                self.critic.online, probs, featurize(self.config, key)
            )
        return advantages


class DdqnGreedyPolicy:
    """Greedy policy over a primitive-action Q network with legality masking."""

    def __init__(self, config: ModelConfig, params: NetParams, feature_mode: str = "extended"):
        self.config = config
        self.params = params
        self.feature_mode = feature_mode
        self._slots = {("match", i, j): idx for idx, (i, j, _) in enumerate(config.edges)}
        self._slots[("enqueue",)] = len(config.edges)
        self._slots[("trash",)] = len(config.edges) + 1

    def _features(self, state: State) -> np.ndarray:
        return featurize(
            self.config, state if self.feature_mode == "extended" else state_key(state), self.feature_mode
        )

    def action(self, state: State):
        from .env import action_key, legal_actions

        legal = legal_actions(self.config, state)
        q = net_forward(self.params, self._features(state))
        best = min(
            ((self._slots[action_key(a)], a) for a in legal),
            key=lambda pair: (-q[pair[0]], pair[0]),
        )
        return best[1]

    def action_distribution(self, state: State):
        return [(self.action(state), 1.0)]

    def act(self, state: State, rng: np.random.Generator):
        return self.action(state)


@dataclass
class DdqnRun:
    params: NetParams
    checkpoints: dict
    trainer: CriticTrainer


def ddqn_direct(
    config: ModelConfig,
    horizon: int,
    epsilon0: float,
    epsilon_decay: float,
    rng: np.random.Generator,
    hyper: ActorCriticConfig | None = None,
    reward_map="auto",
    checkpoints=(),
) -> DdqnRun:
    """Double DQN over primitive actions (match per edge, enqueue, trash).

    Behavior is epsilon-greedy over the legal actions of the current
    state with multiplicative epsilon decay; targets evaluate the online
    argmax (restricted to the successor's legal actions) with the
    periodically synchronized target network.
    """
    from .env import action_key, legal_actions

    hyper = hyper or ActorCriticConfig(feature_mode="extended")
    if reward_map == "auto":
        reward_map = unit_reward_map(config)
    scale, shift = reward_map if reward_map is not None else (1.0, 0.0)
    slots = {("match", i, j): idx for idx, (i, j, _) in enumerate(config.edges)}
    slots[("enqueue",)] = len(config.edges)
    slots[("trash",)] = len(config.edges) + 1
    n_slots = len(config.edges) + 2
    dim = feature_length(config, hyper.feature_mode)

    online = init_net([dim, *hyper.hidden, n_slots], rng)
    adam = init_adam(online, hyper.critic_lr, hyper.critic_lr_decay)
    target = online.copy()
    buffer = ReplayBuffer(hyper.buffer_capacity, dim)
    snapshots: dict[int, NetParams] = {}
    wanted = set(int(c) for c in checkpoints)

    def features(state: State) -> np.ndarray:
        return featurize(
            config, state if hyper.feature_mode == "extended" else state_key(state), hyper.feature_mode
        )

    eps = epsilon0
    updates = 0
    s = sample_initial(config, rng)
    x = features(s)
    for tau in range(horizon):
        legal = legal_actions(config, s)
        legal_slots = sorted(slots[action_key(a)] for a in legal)
        if rng.random() < eps:
            slot = legal_slots[int(rng.integers(len(legal_slots)))]
        else:
            q = net_forward(online, x)
            slot = max(legal_slots, key=lambda c: (q[c], -c))
        a = next(v for v in legal if slots[action_key(v)] == slot)
        s2, r = step(config, s, a, rng)
        x2 = features(s2)
        buffer.push(x, s, slot, scale * r + shift, x2, s2)

        if buffer.size >= hyper.batch_size:
            batch = buffer.sample(hyper.batch_size, rng)
            rows = np.arange(hyper.batch_size)
            q_online_next = net_forward(online, batch["x_next"])
            q_target_next = net_forward(target, batch["x_next"])
            targets_k = np.empty(hyper.batch_size)
            for i, s_next in enumerate(batch["keys_next"]):
                cand = sorted(slots[action_key(v)] for v in legal_actions(config, s_next))
                star = max(cand, key=lambda c: (q_online_next[i, c], -c))
                targets_k[i] = batch["r"][i] + config.discount * q_target_next[i, star]
            prediction = net_forward(online, batch["x"])
            targets = prediction.copy()
            targets[rows, batch["k"]] = targets_k
            net_train_step(online, adam, batch["x"], targets, "squared")
            updates += 1
            if updates % hyper.sync_period == 0:
                target = online.copy()

        eps *= epsilon_decay
        s, x = s2, x2
        if tau + 1 in wanted:
            snapshots[tau + 1] = online.copy()

    trainer = CriticTrainer(online, config.discount, hyper.critic_lr, mode="double")
    trainer.target = target
    return DdqnRun(online, snapshots, trainer)


def net_to_document(params: NetParams) -> dict:
    return {
        "format": "matchmix.net/1",
        "sizes": params.sizes(),
        "layers": [
            {"w": [float(v) for v in w.ravel()], "b": [float(v) for v in b]}
            for w, b in zip(params.weights, params.biases)
        ],
    }


def net_from_document(document: dict) -> NetParams:
    if document.get("format") != "matchmix.net/1":
        raise ValueError("not a network document")
    sizes = document["sizes"]
    weights, biases = [], []
    for (fan_in, fan_out), layer in zip(zip(sizes[:-1], sizes[1:]), document["layers"]):
        weights.append(np.asarray(layer["w"], dtype=float).reshape(fan_in, fan_out))
        biases.append(np.asarray(layer["b"], dtype=float))
    return NetParams(weights, biases)


def save_net(params: NetParams, path) -> None:
    Path(path).write_text(json.dumps(net_to_document(params)) + "\n")


def load_net(path) -> NetParams:
    return net_from_document(json.loads(Path(path).read_text()))
