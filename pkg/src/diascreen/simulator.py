"""Per-user response simulators: one-hot question in, response embedding out.

Each user gets their own two-hidden-layer MLP trained with MSE + l2 on the
(question, response) turns pooled across that user's conversations. A slice
of the first-layer weights serves as a compact per-user fingerprint inside
the agent's state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import nnet
from .catalog import QuestionCatalog
from .cohort import Transcript


@dataclass
class SimulatorConfig:
    hidden: int = 32  # paper-scale 512 is reserved for dimension checks
    learning_rate: float = 1e-2
    l2_lambda: float = 0.0
    batch_size: int = 64
    max_epochs: int = 800
    seed: int = 0


@dataclass
class SimulatorModel:
    user_id: int
    net: nnet.DenseNet
    train_loss_history: list[float]
    fingerprint_index: int = 0

    @property
    def d(self) -> int:
        return self.net.layer_dims[0]

    @property
    def c(self) -> int:
        return self.net.layer_dims[-1]

    @property
    def hidden(self) -> int:
        return self.net.layer_dims[1]


def _pool_turns(transcripts: list[Transcript], catalog: QuestionCatalog):
    inputs, targets = [], []
    for t in transcripts:
        for qid, vec in t.turns:
            inputs.append(catalog.encode_onehot(qid))
            targets.append(vec)
    return np.asarray(inputs), np.asarray(targets)


def fit_user_simulator(
    transcripts: list[Transcript],
    catalog: QuestionCatalog,
    config: SimulatorConfig,
) -> SimulatorModel:
    if not transcripts or all(not t.turns for t in transcripts):
        raise ValueError("cannot fit a simulator for a user with no turns")
    user_id = transcripts[0].user_id
    inputs, targets = _pool_turns(transcripts, catalog)
    c = targets.shape[1]
    net = nnet.init_net(
        [catalog.d, config.hidden, config.hidden, c],
        ["relu", "relu", "identity"],
        seed=config.seed,
    )
    train_cfg = nnet.TrainConfig(
        learning_rate=config.learning_rate,
        l2_lambda=config.l2_lambda,
        batch_size=config.batch_size,
        max_epochs=config.max_epochs,
        seed=config.seed,
    )
    history = nnet.fit_regression(net, inputs, targets, train_cfg)
    return SimulatorModel(user_id, net, history)


def simulate_response(model: SimulatorModel, question_id: int) -> np.ndarray:
    if not 0 <= question_id < model.d:
        raise ValueError(f"question id {question_id} out of range [0, {model.d})")
    onehot = np.zeros(model.d)
    onehot[question_id] = 1.0
    return nnet.predict(model.net, onehot)


def fingerprint(model: SimulatorModel) -> np.ndarray:
    """Column of the first-layer weight matrix for one input index; length h."""
    return model.net.weights[0][:, model.fingerprint_index].copy()


def leave_one_out_mse(
    transcripts: list[Transcript],
    catalog: QuestionCatalog,
    config: SimulatorConfig,
) -> float:
    """Train on all conversations but the last; mean over held-out turns of
    the mean squared coordinate error."""
    if len(transcripts) < 2:
        raise ValueError("leave-one-out evaluation needs at least 2 conversations")
    ordered = sorted(transcripts, key=lambda t: t.conversation_index)
    model = fit_user_simulator(ordered[:-1], catalog, config)
    held_out = ordered[-1]
    errors = []
    for qid, vec in held_out.turns:
        pred = simulate_response(model, qid)
        errors.append(float(np.mean((pred - vec) ** 2)))
    return float(np.mean(errors))


def save_simulator(model: SimulatorModel, path: str):
    doc = {
        "user_id": model.user_id,
        "fingerprint_index": model.fingerprint_index,
        "net": json.loads(nnet.to_json(model.net)),
        "train_loss_history": model.train_loss_history,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_simulator(path: str) -> SimulatorModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    net = nnet.from_json(json.dumps(doc["net"]))
    return SimulatorModel(
        doc["user_id"], net, doc["train_loss_history"], doc["fingerprint_index"]
    )
