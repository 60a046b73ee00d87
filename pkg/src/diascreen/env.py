"""Dialogue environment: state construction, rewards, and episode control.

The agent-visible state packs five pieces: the latest response embedding,
the running mean of all responses, the user fingerprint, the classifier's
[p_NL, p_MCI], and the count tau of turns on which the classifier was
confident (max prob >= threshold). Flattened length C = 2c + h + 3.

Rewards: -10 - 10*tau per non-terminal step; +1000 / -500 at the terminal
step for a correct / incorrect final classification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import simulator as sim
from .catalog import QuestionCatalog


@dataclass
class EnvConfig:
    T_max: int = 35
    confidence_threshold: float = 0.65
    step_penalty: float = -10.0
    tau_penalty: float = -10.0
    terminal_correct: float = 1000.0
    terminal_wrong: float = -500.0
    gamma: float = 0.95
    include_greeting_in_average: bool = True
    forbid_repeats: bool = True  # a question already asked this episode is masked

    def __post_init__(self):
        if not 0.5 <= self.confidence_threshold < 1.0:
            raise ValueError("confidence_threshold must lie in [0.5, 1)")
        if self.T_max < 1:
            raise ValueError("T_max must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class DialogueState:
    current_response: np.ndarray  # R^c
    moving_average: np.ndarray  # R^c
    fingerprint: np.ndarray  # R^h
    class_probs: np.ndarray  # [p_NL, p_MCI]
    tau: int
    turn: int


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    done: bool
    next_mask: np.ndarray  # selectable-action mask at s_next (all 0 if done)


def state_dim(c: int, h: int) -> int:
    return 2 * c + h + 3


def flatten(state: DialogueState) -> np.ndarray:
    """Fixed layout: current, moving average, fingerprint, probs, tau."""
    return np.concatenate(
        [
            state.current_response,
            state.moving_average,
            state.fingerprint,
            state.class_probs,
            [float(state.tau)],
        ]
    )


def unflatten(vec: np.ndarray, c: int, h: int, turn: int = 0) -> DialogueState:
    vec = np.asarray(vec, dtype=np.float64)
    if len(vec) != state_dim(c, h):
        raise ValueError(f"state length {len(vec)} != expected {state_dim(c, h)}")
    return DialogueState(
        current_response=vec[:c].copy(),
        moving_average=vec[c : 2 * c].copy(),
        fingerprint=vec[2 * c : 2 * c + h].copy(),
        class_probs=vec[2 * c + h : 2 * c + h + 2].copy(),
        tau=int(round(vec[-1])),
        turn=turn,
    )


def reward(done: bool, correct: bool, tau: int, config: EnvConfig) -> float:
    if not done:
        return config.step_penalty + config.tau_penalty * tau
    return config.terminal_correct if correct else config.terminal_wrong


class EpisodeFinished(RuntimeError):
    pass


class SimulatorUser:
    """Default user port: responses and fingerprint from a trained simulator."""

    def __init__(self, model: sim.SimulatorModel):
        self.model = model
        self.c = model.c
        self.d = model.d

    def respond(self, question_id: int) -> np.ndarray:
        return sim.simulate_response(self.model, question_id)

    def fingerprint(self) -> np.ndarray:
        return sim.fingerprint(self.model)


class DialogueEnv:
    """One instance per episode stream for a single user.

    `simulator` is either a SimulatorModel or any object exposing the same
    port: attributes c and d plus respond(question_id) and fingerprint().
    """

    def __init__(
        self,
        catalog: QuestionCatalog,
        simulator,
        true_label: int,
        classifier: clf.ClassifierModel,
        config: EnvConfig,
    ):
        if isinstance(simulator, sim.SimulatorModel):
            simulator = SimulatorUser(simulator)
        if simulator.c != classifier.c:
            raise ValueError(
                f"simulator embeds in R^{simulator.c} but classifier expects R^{classifier.c}"
            )
        if simulator.d != catalog.d:
            raise ValueError("simulator input dim does not match catalog size")
        self.catalog = catalog
        self.simulator = simulator
        self.true_label = int(true_label)
        self.classifier = classifier
        self.config = config
        self._fingerprint = simulator.fingerprint()
        self.state: DialogueState | None = None
        self.history: list[int] = []
        self._responses: list[np.ndarray] = []
        self.done = True

    @property
    def c(self) -> int:
        return self.simulator.c

    @property
    def h(self) -> int:
        return len(self._fingerprint)

    def reset(self) -> DialogueState:
        """Execute the pinned greeting as turn 0 and return s_1."""
        greeting = self.catalog.greeting_id
        response = self.simulator.respond(greeting)
        self.history = [greeting]
        self._responses = [response]
        self.done = False
        avg = self._current_average()
        probs = clf.predict_proba(self.classifier, avg)
        self.state = DialogueState(
            current_response=response,
            moving_average=avg,
            fingerprint=self._fingerprint.copy(),
            class_probs=probs,
            tau=0,
            turn=0,
        )
        return self.state

    def _current_average(self) -> np.ndarray:
        vecs = self._responses if self.config.include_greeting_in_average else self._responses[1:]
        if not vecs:
            return np.zeros(self.c)
        return np.mean(vecs, axis=0)

    def action_mask(self) -> np.ndarray:
        """Selectable actions now: the follow-up rule, minus greeting actions,
        and (by default) minus questions already asked this episode. Goodbye
        is never masked, so at least one action is always available."""
        mask = self.catalog.mask_vector(self.history)
        for qid in self.catalog.ids_in_category("greetings"):
            mask[qid] = 0.0
        if self.config.forbid_repeats:
            for qid in self.history:
                if not self.catalog.is_goodbye(qid):
                    mask[qid] = 0.0
        return mask

    def step(self, action_id: int) -> tuple[DialogueState, float, bool]:
        if self.done or self.state is None:
            raise EpisodeFinished("episode already finished; call reset()")
        mask = self.action_mask()
        if mask[action_id] == 0.0:
            raise ValueError(f"action {action_id} is masked at this turn")
        response = self._deliver(action_id)
        return self._advance(action_id, response)

    def _deliver(self, action_id: int) -> np.ndarray:
        return self.simulator.respond(action_id)

    def _advance(self, action_id: int, response: np.ndarray):
        """Shared bookkeeping for simulator-driven and replayed responses."""
        state = self.state
        self.history.append(action_id)
        self._responses.append(response)
        turn = state.turn + 1
        avg = self._current_average()
        probs = clf.predict_proba(self.classifier, avg)
        tau = state.tau + (1 if float(probs.max()) >= self.config.confidence_threshold else 0)
        done = self.catalog.is_goodbye(action_id) or turn >= self.config.T_max
        correct = int(probs[1] >= 0.5) == self.true_label
        r = reward(done, correct, tau, self.config)
        self.state = DialogueState(
            current_response=response,
            moving_average=avg,
            fingerprint=self._fingerprint.copy(),
            class_probs=probs,
            tau=tau,
            turn=turn,
        )
        self.done = done
        return self.state, r, done

    def replay_step(self, action_id: int, response: np.ndarray):
        """Advance using a recorded response instead of the simulator (corpus
        replay for pre-training). Masking is not enforced: the corpus order is
        taken as-is."""
        if self.done or self.state is None:
            raise EpisodeFinished("episode already finished; call reset()")
        return self._advance(action_id, response)


def trace_record(turn: int, action_id: int, r: float, state: DialogueState, done: bool) -> str:
    """One line-delimited JSON record for episode trace logs."""
    return json.dumps(
        {
            "turn": turn,
            "action_id": int(action_id),
            "reward": r,
            "p_mci": float(state.class_probs[1]),
            "tau": state.tau,
            "done": done,
        }
    )
