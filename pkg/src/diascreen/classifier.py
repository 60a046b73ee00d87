"""Linear screening classifier over averaged response embeddings, plus
metrics (AUC / sensitivity / specificity / F1) and stratified split plans.

Two interchangeable kinds: l2-regularized logistic regression (default; the
environment needs calibrated per-turn probabilities) and a linear hinge-loss
model with Platt scaling behind the same interface.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit


@dataclass
class ClassifierModel:
    weights: np.ndarray
    bias: float
    kind: str  # "logistic" or "hinge+platt"
    l2: float
    platt_a: float = 1.0
    platt_b: float = 0.0

    @property
    def c(self) -> int:
        return len(self.weights)


@dataclass
class SplitPlan:
    n_splits: int = 10
    train_fraction: float = 0.65
    seed: int = 0


def _check_two_classes(labels: np.ndarray):
    if len(np.unique(labels)) < 2:
        raise ValueError("need examples of both classes")


def _logistic_objective(params, X, y, l2):
    w, b = params[:-1], params[-1]
    z = X @ w + b
    # mean log-loss, numerically stable; l2 applies to weights only
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z)) + 0.5 * l2 * float(w @ w)
    p = expit(z)
    gw = X.T @ (p - y) / len(y) + l2 * w
    gb = float(np.mean(p - y))
    return loss, np.append(gw, gb)


def _fit_logistic(X, y, l2):
    x0 = np.zeros(X.shape[1] + 1)
    res = minimize(
        _logistic_objective,
        x0,
        args=(X, y, l2),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": 1e-9, "ftol": 1e-14},
    )
    return res.x[:-1], float(res.x[-1])


def _fit_hinge(X, y, l2, seed):
    """Linear hinge loss (labels in {-1,+1}) via deterministic subgradient
    descent, then Platt scaling of the margins."""
    signed = 2.0 * y - 1.0
    n, c = X.shape
    w = np.zeros(c)
    b = 0.0
    for t in range(1, 3001):
        margins = signed * (X @ w + b)
        active = margins < 1.0
        gw = -(signed[active, None] * X[active]).sum(axis=0) / n + l2 * w
        gb = -float(signed[active].sum()) / n
        lr = 1.0 / (1.0 + 0.01 * t)
        w -= lr * gw
        b -= lr * gb
    # Platt: fit sigma(a*m + b) to labels on training margins
    m = X @ w + b

    def platt_obj(params):
        z = params[0] * m + params[1]
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        p = expit(z)
        return loss, np.array([float(np.mean((p - y) * m)), float(np.mean(p - y))])

    res = minimize(platt_obj, np.array([1.0, 0.0]), jac=True, method="L-BFGS-B")
    return w, b, float(res.x[0]), float(res.x[1])


def fit(
    features: np.ndarray,
    labels: np.ndarray,
    l2: float = 1e-2,
    kind: str = "logistic",
    seed: int = 0,
) -> ClassifierModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_two_classes(y)
    if kind == "logistic":
        w, b = _fit_logistic(X, y, l2)
        return ClassifierModel(w, b, kind, l2)
    if kind == "hinge+platt":
        w, b, pa, pb = _fit_hinge(X, y, l2, seed)
        return ClassifierModel(w, b, kind, l2, pa, pb)
    raise ValueError(f"unknown classifier kind {kind!r}")


def decision_score(model: ClassifierModel, feature: np.ndarray) -> float:
    feature = np.asarray(feature, dtype=np.float64)
    if feature.shape[-1] != model.c:
        raise ValueError(f"feature dim {feature.shape[-1]} != model dim {model.c}")
    return float(feature @ model.weights + model.bias)


def predict_proba(model: ClassifierModel, feature: np.ndarray) -> np.ndarray:
    """[p_NL, p_MCI]; components sum to 1."""
    z = decision_score(model, feature)
    if model.kind == "hinge+platt":
        z = model.platt_a * z + model.platt_b
    p1 = float(expit(z))
    return np.array([1.0 - p1, p1])


def predict_label(model: ClassifierModel, feature: np.ndarray) -> int:
    return int(predict_proba(model, feature)[1] >= 0.5)


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties = 1/2.

    Computed from midranks (Mann-Whitney), O(n log n).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC undefined: both classes must be present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = float(ranks[pos].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def binary_metrics(scores, labels, threshold: float = 0.5) -> dict[str, float]:
    """AUC plus sensitivity/specificity/F1 of (score >= threshold)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pred = (scores >= threshold).astype(int)
    tp = int(np.sum((pred == 1) & (labels == 1)))
    fn = int(np.sum((pred == 0) & (labels == 1)))
    tn = int(np.sum((pred == 0) & (labels == 0)))
    fp = int(np.sum((pred == 1) & (labels == 0)))
    sen = tp / (tp + fn) if tp + fn else 0.0
    spec = tn / (tn + fp) if tn + fp else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    f1 = 2 * precision * sen / (precision + sen) if precision + sen else 0.0
    return {
        "auc": auc(scores, labels),
        "sensitivity": sen,
        "specificity": spec,
        "f1": f1,
    }


def stratified_shuffle_split(labels, plan: SplitPlan) -> list[tuple[list[int], list[int]]]:
    """Per split: disjoint (train, test) covering all ids, class proportions
    preserved within one user."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ValueError("each class needs at least 2 members to stratify")
    n = len(labels)
    n_train_total = int(round(plan.train_fraction * n))
    # apportion the train budget across classes by largest remainder
    exact = counts * plan.train_fraction
    base = np.floor(exact).astype(int)
    short = n_train_total - int(base.sum())
    order = np.argsort(-(exact - base), kind="stable")
    for k in range(short):
        base[order[k % len(classes)]] += 1
    base = np.minimum(np.maximum(base, 1), counts - 1)  # both sides non-empty
    splits = []
    for s in range(plan.n_splits):
        rng = np.random.default_rng(np.random.SeedSequence([plan.seed, s]))
        train_ids: list[int] = []
        test_ids: list[int] = []
        for cls, n_train_cls in zip(classes, base):
            members = np.flatnonzero(labels == cls)
            rng.shuffle(members)
            train_ids.extend(int(i) for i in members[:n_train_cls])
            test_ids.extend(int(i) for i in members[n_train_cls:])
        splits.append((sorted(train_ids), sorted(test_ids)))
    return splits


def save_classifier(model: ClassifierModel, path: str):
    doc = {
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "kind": model.kind,
        "l2": model.l2,
        "platt_a": model.platt_a,
        "platt_b": model.platt_b,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_classifier(path: str) -> ClassifierModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return ClassifierModel(
        np.asarray(doc["weights"], dtype=np.float64),
        doc["bias"],
        doc["kind"],
        doc["l2"],
        doc["platt_a"],
        doc["platt_b"],
    )
