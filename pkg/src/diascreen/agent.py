"""DQN learner: masked epsilon-greedy policy, ring replay buffer, fixed
target network, corpus pre-training, and the per-user training loop.

The Q-network maps the flattened dialogue state to one value per question;
its output layer is ReLU so all Q-values are nonnegative and a multiplicative
0/1 mask cleanly disables forbidden actions. TD regression touches only the
taken action's output unit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nnet
from .catalog import QuestionCatalog
from .cohort import Transcript
from .env import DialogueEnv, EnvConfig, Transition, flatten
from .simulator import SimulatorModel


@dataclass
class AgentConfig:
    gamma: float = 0.95
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int | None = None  # default: half of total episodes
    batch_size: int = 32
    buffer_capacity: int = 50_000
    target_sync_episodes: int = 50
    pretrain_passes: int = 3
    episodes_per_user: int = 20
    learning_rate: float = 1e-3
    hidden_dims: tuple[int, ...] = (128, 128)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0:
            raise ValueError("need 0 <= epsilon_end <= epsilon_start <= 1")


def make_qnetwork(
    state_dim: int, n_actions: int, hidden_dims, seed: int, output_bias: float = 500.0
) -> nnet.DenseNet:
    dims = [state_dim, *hidden_dims, n_actions]
    acts = ["relu"] * len(hidden_dims) + ["relu"]  # ReLU output: Q >= 0
    net = nnet.init_net(dims, acts, seed=seed)
    # Optimistic output-bias initialization, on the scale of the terminal
    # reward (the default suits the dialogue rewards of +-hundreds).  It
    # keeps the ReLU output units alive (a unit whose preactivation goes
    # negative gets no gradient and cannot recover) and makes the greedy
    # policy try every action before settling, since an untried action
    # retains its optimistic value.
    net.biases[-1][:] = output_bias
    return net


class ReplayBuffer:
    """Preallocated FIFO ring of transitions with seeded minibatch sampling."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.intp)
        self.r = np.zeros(capacity)
        self.s_next = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.next_mask = np.zeros((capacity, n_actions))
        self.ptr = 0
        self.size = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return self.size

    def add(self, t: Transition):
        i = self.ptr
        self.s[i] = t.s
        self.a[i] = t.a
        self.r[i] = t.r
        self.s_next[i] = t.s_next
        self.done[i] = t.done
        self.next_mask[i] = t.next_mask
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int):
        idx = self.rng.integers(0, self.size, size=batch_size)
        return (
            self.s[idx],
            self.a[idx],
            self.r[idx],
            self.s_next[idx],
            self.done[idx],
            self.next_mask[idx],
        )


def masked_q(qnet: nnet.DenseNet, state: np.ndarray, mask: np.ndarray) -> np.ndarray:
    q = nnet.predict(qnet, state)
    if q.shape != mask.shape:
        raise ValueError(f"mask length {mask.shape} != action count {q.shape}")
    return mask * q


def select_action(
    qnet: nnet.DenseNet,
    state: np.ndarray,
    mask: np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> int:
    unmasked = np.flatnonzero(mask)
    if len(unmasked) == 0:
        raise RuntimeError("no selectable action: mask is all zeros")
    if rng.random() < epsilon:
        return int(rng.choice(unmasked))
    q = masked_q(qnet, state, mask)
    # argmax restricted to unmasked actions; ties break to the lowest index
    best = unmasked[np.argmax(q[unmasked])]
    return int(best)


def td_targets(
    target_qnet: nnet.DenseNet,
    r: np.ndarray,
    s_next: np.ndarray,
    done: np.ndarray,
    next_mask: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """y = r for terminal transitions, else r + gamma * max over unmasked
    next-state actions of the target network's Q."""
    y = np.asarray(r, dtype=np.float64).copy()
    live = ~np.asarray(done, dtype=bool)
    if live.any():
        q_next = nnet.predict(target_qnet, np.atleast_2d(s_next)[live])
        q_next = np.where(np.atleast_2d(next_mask)[live] > 0, q_next, -np.inf)
        y[live] += gamma * q_next.max(axis=1)
    return y


def td_target(t: Transition, target_qnet: nnet.DenseNet, gamma: float) -> float:
    return float(
        td_targets(
            target_qnet,
            np.array([t.r]),
            t.s_next[None, :],
            np.array([t.done]),
            t.next_mask[None, :],
            gamma,
        )[0]
    )


def _learn_step(qnet, target_qnet, buffer, train_cfg, opt, config) -> float:
    s, a, r, s_next, done, next_mask = buffer.sample(config.batch_size)
    y = td_targets(target_qnet, r, s_next, done, next_mask, config.gamma)
    return nnet.train_step(qnet, s, y, train_cfg, opt, action_index=a)


def transitions_from_transcript(
    transcript: Transcript,
    env: DialogueEnv,
) -> list[Transition]:
    """Replay a recorded conversation through the environment bookkeeping:
    one transition per post-greeting turn, responses taken verbatim."""
    turns = list(transcript.turns)
    if turns and turns[0][0] == env.catalog.greeting_id:
        turns = turns[1:]  # reset() already plays the greeting
    env.reset()
    out = []
    for qid, response in turns:
        if env.done:
            break
        s = flatten(env.state)
        next_state, r, done = env.replay_step(qid, response)
        mask = np.zeros(env.catalog.d) if done else env.action_mask()
        out.append(Transition(s, qid, r, flatten(next_state), done, mask))
    return out


def pretrain_from_corpus(
    qnet: nnet.DenseNet,
    transcripts: list[Transcript],
    simulators: dict[int, SimulatorModel],
    labels: dict[int, int],
    classifier_model,
    catalog: QuestionCatalog,
    env_config: EnvConfig,
    config: AgentConfig,
    buffer: ReplayBuffer | None = None,
) -> ReplayBuffer:
    """Fill the replay buffer from corpus-replayed episodes and run
    pretrain_passes of minibatch updates. Returns the (shared) buffer."""
    n_actions = catalog.d
    if buffer is None:
        sd = qnet.layer_dims[0]
        buffer = ReplayBuffer(config.buffer_capacity, sd, n_actions, seed=config.seed)
    for t in transcripts:
        env = DialogueEnv(catalog, simulators[t.user_id], labels[t.user_id], classifier_model, env_config)
        for tr in transitions_from_transcript(t, env):
            buffer.add(tr)
    if len(buffer) == 0:
        return buffer
    train_cfg = nnet.TrainConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    opt = nnet.Optimizer(qnet, train_cfg)
    target = qnet.copy()
    n_updates = config.pretrain_passes * max(1, len(buffer) // config.batch_size)
    for k in range(n_updates):
        _learn_step(qnet, target, buffer, train_cfg, opt, config)
        if (k + 1) % 200 == 0:
            target = qnet.copy()
    return buffer


@dataclass
class TrainResult:
    qnet: nnet.DenseNet
    target_qnet: nnet.DenseNet
    curve: list[dict]  # per-episode: episode, user_id, return, epsilon, loss


def train(
    qnet: nnet.DenseNet,
    user_simulators: dict[int, SimulatorModel],
    user_labels: dict[int, int],
    classifier_model,
    catalog: QuestionCatalog,
    env_config: EnvConfig,
    config: AgentConfig,
    buffer: ReplayBuffer | None = None,
) -> TrainResult:
    """Outer loop over users, inner loop of episodes against each user's
    simulator; one minibatch gradient step per environment step; target
    network synced every target_sync_episodes episodes."""
    user_ids = sorted(user_simulators)
    total_episodes = len(user_ids) * config.episodes_per_user
    decay = config.epsilon_decay_episodes or max(1, total_episodes // 2)
    sd = qnet.layer_dims[0]
    if buffer is None:
        buffer = ReplayBuffer(config.buffer_capacity, sd, catalog.d, seed=config.seed)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 17]))
    train_cfg = nnet.TrainConfig(
        learning_rate=config.learning_rate,
        batch_size=config.batch_size,
        seed=config.seed,
    )
    opt = nnet.Optimizer(qnet, train_cfg)
    target = qnet.copy()
    curve = []
    episode = 0
    for uid in user_ids:
        env = DialogueEnv(
            catalog, user_simulators[uid], user_labels[uid], classifier_model, env_config
        )
        for _ in range(config.episodes_per_user):
            episode += 1
            frac = min(1.0, (episode - 1) / decay)
            epsilon = config.epsilon_start + frac * (config.epsilon_end - config.epsilon_start)
            state = env.reset()
            ep_return = 0.0
            ep_loss = 0.0
            steps = 0
            while not env.done:
                mask = env.action_mask()
                a = select_action(qnet, flatten(state), mask, epsilon, rng)
                s_flat = flatten(state)
                next_state, r, done = env.step(a)
                next_mask = np.zeros(catalog.d) if done else env.action_mask()
                buffer.add(Transition(s_flat, a, r, flatten(next_state), done, next_mask))
                if len(buffer) >= config.batch_size:
                    ep_loss += _learn_step(qnet, target, buffer, train_cfg, opt, config)
                ep_return += r
                steps += 1
                state = next_state
            if episode % config.target_sync_episodes == 0:
                target = qnet.copy()
            curve.append(
                {
                    "episode": episode,
                    "user_id": uid,
                    "return": ep_return,
                    "epsilon": epsilon,
                    "loss": ep_loss / max(steps, 1),
                }
            )
    return TrainResult(qnet, target, curve)
