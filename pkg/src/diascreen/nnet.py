"""Minimal dense-network core: forward, backward, Adam/SGD updates, JSON i/o.

All math is float64 numpy. Networks are plain containers of per-layer
weight matrices (out_dim x in_dim), bias vectors and activation tags, so
both the per-user response simulators and the Q-network share one code
path. Inputs may be a single vector or a batch (rows = samples).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")

SERIAL_VERSION = 1


class ShapeError(ValueError):
    """Raised when an input or gradient does not match the network layout."""


@dataclass
class DenseNet:
    """A fully-connected net: weights[k] is (out_k x in_k), in_k = out_{k-1}."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) != len(self.activations):
            raise ShapeError("weights, biases and activations must align per layer")
        for k, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r} in layer {k}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ShapeError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeError(
                    f"layer {k} expects input dim {w.shape[1]}, "
                    f"previous layer outputs {self.weights[k - 1].shape[0]}"
                )

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_lambda: float = 0.0
    batch_size: int = 32
    max_epochs: int = 500
    seed: int = 0
    optimizer: str = "adam"  # "adam" or "sgd"

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be nonnegative")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


def init_net(layer_dims: list[int], activations: list[str], seed: int) -> DenseNet:
    """He-style uniform init, deterministic in the seed."""
    if len(activations) != len(layer_dims) - 1:
        raise ShapeError("need one activation tag per weight layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases, list(activations))


def _apply_activation(z: np.ndarray, act: str) -> np.ndarray:
    if act == "relu":
        return np.maximum(z, 0.0)
    return z


def forward(net: DenseNet, x: np.ndarray) -> list[np.ndarray]:
    """Return per-layer post-activation outputs; the last entry is the output.

    `x` may be a vector (len = input dim) or a batch of shape (n, input dim).
    """
    x = np.asarray(x, dtype=np.float64)
    in_dim = net.weights[0].shape[1]
    if x.shape[-1] != in_dim:
        raise ShapeError(f"input dim {x.shape[-1]} != expected {in_dim}")
    outs = []
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _apply_activation(z, act)
        outs.append(a)
    return outs


def predict(net: DenseNet, x: np.ndarray) -> np.ndarray:
    return forward(net, x)[-1]


def backward(
    net: DenseNet,
    x: np.ndarray,
    grad_out: np.ndarray,
    l2_lambda: float = 0.0,
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backprop `grad_out` (dLoss/dOutput) through the net.

    Returns (weight grads, bias grads) shaped like the parameters. The l2
    term contributes l2_lambda * w to each weight gradient (biases are not
    penalized). Batch inputs sum gradients over rows, matching a grad_out
    already scaled by the loss (e.g. divided by batch size for a mean loss).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    grad_out = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
    acts = forward(net, x)
    if grad_out.shape != acts[-1].shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {acts[-1].shape}")

    w_grads = [np.empty_like(w) for w in net.weights]
    b_grads = [np.empty_like(b) for b in net.biases]
    delta = grad_out
    for k in range(net.n_layers - 1, -1, -1):
        if net.activations[k] == "relu":
            delta = delta * (acts[k] > 0)
        layer_in = x if k == 0 else acts[k - 1]
        w_grads[k] = delta.T @ layer_in + l2_lambda * net.weights[k]
        b_grads[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ net.weights[k]
    return w_grads, b_grads


class Optimizer:
    """Adam (default) or plain SGD over a DenseNet's parameters."""

    def __init__(self, net: DenseNet, config: TrainConfig):
        self.lr = config.learning_rate
        self.kind = config.optimizer
        if self.kind == "adam":
            self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
            self.t = 0
            self.m_w = [np.zeros_like(w) for w in net.weights]
            self.v_w = [np.zeros_like(w) for w in net.weights]
            self.m_b = [np.zeros_like(b) for b in net.biases]
            self.v_b = [np.zeros_like(b) for b in net.biases]

    def apply(self, net: DenseNet, w_grads, b_grads):
        if self.kind == "sgd":
            for w, b, gw, gb in zip(net.weights, net.biases, w_grads, b_grads):
                w -= self.lr * gw
                b -= self.lr * gb
            return
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, (gw, gb) in enumerate(zip(w_grads, b_grads)):
            self.m_w[k] = self.beta1 * self.m_w[k] + (1 - self.beta1) * gw
            self.v_w[k] = self.beta2 * self.v_w[k] + (1 - self.beta2) * gw * gw
            self.m_b[k] = self.beta1 * self.m_b[k] + (1 - self.beta1) * gb
            self.v_b[k] = self.beta2 * self.v_b[k] + (1 - self.beta2) * gb * gb
            net.weights[k] -= self.lr * (self.m_w[k] / c1) / (np.sqrt(self.v_w[k] / c2) + self.eps)
            net.biases[k] -= self.lr * (self.m_b[k] / c1) / (np.sqrt(self.v_b[k] / c2) + self.eps)


def mse_loss_grad(output: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over samples of 0.5 * ||out - target||^2, and dLoss/dOutput."""
    output = np.atleast_2d(output)
    target = np.atleast_2d(target)
    n = output.shape[0]
    diff = output - target
    loss = 0.5 * float(np.sum(diff * diff)) / n
    return loss, diff / n


def l2_penalty(net: DenseNet, l2_lambda: float) -> float:
    return 0.5 * l2_lambda * sum(float(np.sum(w * w)) for w in net.weights)


def train_step(
    net: DenseNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    optimizer: Optimizer,
    action_index: np.ndarray | None = None,
) -> float:
    """One optimizer update on a batch; returns the loss before the step.

    Regression mode: `targets` has one row per input, full-output MSE.
    Q-regression mode: `targets` is a vector of scalar TD targets and
    `action_index` selects the single output unit per sample that receives
    gradient; all other units get exactly zero data gradient.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    if inputs.shape[0] == 0:
        raise ValueError("empty batch")
    output = forward(net, inputs)[-1]
    if action_index is not None:
        action_index = np.asarray(action_index, dtype=np.intp)
        td = np.asarray(targets, dtype=np.float64).reshape(-1)
        rows = np.arange(inputs.shape[0])
        diff = output[rows, action_index] - td
        loss = 0.5 * float(np.sum(diff * diff)) / inputs.shape[0]
        grad = np.zeros_like(output)
        grad[rows, action_index] = diff / inputs.shape[0]
    else:
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        loss, grad = mse_loss_grad(output, targets)
    loss += l2_penalty(net, config.l2_lambda)
    w_grads, b_grads = backward(net, inputs, grad, l2_lambda=config.l2_lambda)
    optimizer.apply(net, w_grads, b_grads)
    return loss


def fit_regression(
    net: DenseNet,
    inputs: np.ndarray,
    targets: np.ndarray,
    config: TrainConfig,
    plateau_rel_tol: float = 1e-6,
    plateau_patience: int = 10,
) -> list[float]:
    """Minibatch training loop with a loss-plateau stop; returns loss history."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    n = inputs.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    opt = Optimizer(net, config)
    history: list[float] = []
    best = np.inf
    since_improved = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            epoch_loss += train_step(net, inputs[idx], targets[idx], config, opt) * len(idx)
        epoch_loss /= n
        history.append(epoch_loss)
        if epoch_loss < best * (1.0 - plateau_rel_tol):
            best = epoch_loss
            since_improved = 0
        else:
            since_improved += 1
            if since_improved >= plateau_patience:
                break
    return history


def to_json(net: DenseNet) -> str:
    """Versioned JSON; float repr round-trips bit-exactly for finite values."""
    doc = {
        "version": SERIAL_VERSION,
        "layer_dims": net.layer_dims,
        "activations": net.activations,
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }
    return json.dumps(doc)


def from_json(text: str) -> DenseNet:
    doc = json.loads(text)
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')!r}")
    net = DenseNet(
        [np.asarray(w, dtype=np.float64) for w in doc["weights"]],
        [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
        list(doc["activations"]),
    )
    if net.layer_dims != doc["layer_dims"]:
        raise ValueError("layer_dims field disagrees with stored weight shapes")
    return net
