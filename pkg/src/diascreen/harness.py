"""Experiment orchestration: cohort -> simulators -> classifier -> agent ->
turn-constrained evaluation, plus corpus baselines, question-frequency
rankings, artifact persistence and the interactive interview mode.

Stages are plain functions so tests can drive them individually; the
training stages only ever read labels for the ids they are given.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import subprocess
from dataclasses import dataclass, field, asdict

import numpy as np

from . import agent as agent_mod
from . import classifier as clf
from . import nnet
from .catalog import QuestionCatalog, default_catalog, make_synthetic_catalog
from .cohort import (
    CohortSpec,
    Transcript,
    generate_cohort,
    generate_transcripts,
    load_transcripts,
    save_transcripts,
    transcripts_by_user,
)
from .env import DialogueEnv, EnvConfig, flatten
from .simulator import (
    SimulatorConfig,
    SimulatorModel,
    fit_user_simulator,
    leave_one_out_mse,
    load_simulator,
    save_simulator,
)

DEFAULT_TURN_CONSTRAINTS = (1, 3, 5, 10, 15, 20, 25, 30, 35)
POLICY_WINDOWS = ((1, 5), (6, 10), (11, 15), (16, 20), (21, 35))

# Published results on the original clinical dataset (proprietary corpus and
# pretrained 4800-dim sentence encoder); kept in reports for context only,
# not reproducible from synthetic cohorts.
REFERENCE_RESULTS = {
    "note": "results on the original proprietary clinical dataset; context only",
    "rl_t35_auc": 0.818,
    "linear_l2_baseline_auc": 0.797,
    "simulator_loo_mse": 0.00495,
}


@dataclass
class ExperimentConfig:
    catalog_size: int | None = 20  # None -> built-in 107-question catalog
    cohort: CohortSpec = field(default_factory=lambda: CohortSpec(
        n_users=60,
        c=64,
        discriminative_ids=(3, 4, 5, 6),
        sigma_user=0.02,
        turns_range=(30, 60),
    ))
    split: clf.SplitPlan = field(default_factory=clf.SplitPlan)
    sim: SimulatorConfig = field(default_factory=lambda: SimulatorConfig(max_epochs=300))
    env: EnvConfig = field(default_factory=EnvConfig)
    agent: agent_mod.AgentConfig = field(default_factory=lambda: agent_mod.AgentConfig(
        learning_rate=2e-3,
        episodes_per_user=30,
        epsilon_end=0.1,
        pretrain_passes=5,
    ))
    classifier_l2: float = 1e-2
    classifier_kind: str = "logistic"
    turn_constraints: tuple[int, ...] = DEFAULT_TURN_CONSTRAINTS
    loo_users: int = 10  # how many users get the leave-one-out simulator check
    master_seed: int = 0

    def __post_init__(self):
        for t in self.turn_constraints:
            if not 1 <= t <= self.env.T_max:
                raise ValueError(f"turn constraint {t} outside [1, T_max={self.env.T_max}]")

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        if "cohort" in doc:
            cohort = dict(doc["cohort"])
            for key in ("discriminative_ids", "turns_range"):
                if key in cohort:
                    cohort[key] = tuple(cohort[key])
            doc["cohort"] = CohortSpec(**cohort)
        if "split" in doc:
            doc["split"] = clf.SplitPlan(**doc["split"])
        if "sim" in doc:
            doc["sim"] = SimulatorConfig(**doc["sim"])
        if "env" in doc:
            doc["env"] = EnvConfig(**doc["env"])
        if "agent" in doc:
            agent_cfg = dict(doc["agent"])
            if "hidden_dims" in agent_cfg:
                agent_cfg["hidden_dims"] = tuple(agent_cfg["hidden_dims"])
            doc["agent"] = agent_mod.AgentConfig(**agent_cfg)
        if "turn_constraints" in doc:
            doc["turn_constraints"] = tuple(doc["turn_constraints"])
        return cls(**doc)


def derived_seed(master: int, *tags) -> int:
    """Stable 64-bit sub-seed from the master seed and integer tags."""
    ss = np.random.SeedSequence([master, *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_catalog(config: ExperimentConfig) -> QuestionCatalog:
    if config.catalog_size is None:
        return default_catalog()
    return make_synthetic_catalog(config.catalog_size)


def build_world(config: ExperimentConfig, catalog: QuestionCatalog):
    """Cohort, transcripts, and label map from the master seed."""
    cohort = generate_cohort(config.cohort, catalog, derived_seed(config.master_seed, 1))
    transcripts = generate_transcripts(
        cohort, config.cohort, catalog, derived_seed(config.master_seed, 2)
    )
    labels = {u.user_id: u.label for u in cohort}
    return cohort, transcripts, labels


def fit_all_simulators(
    by_user: dict[int, list[Transcript]],
    catalog: QuestionCatalog,
    sim_cfg: SimulatorConfig,
    master_seed: int,
) -> dict[int, SimulatorModel]:
    """One simulator per user, derived per-user seed. Labels are never read."""
    models = {}
    for uid in sorted(by_user):
        cfg = SimulatorConfig(**{**asdict(sim_cfg), "seed": derived_seed(master_seed, 10, uid)})
        models[uid] = fit_user_simulator(by_user[uid], catalog, cfg)
    return models


def user_average_features(by_user: dict[int, list[Transcript]]) -> dict[int, np.ndarray]:
    """Mean embedding over all turns of all of a user's conversations."""
    feats = {}
    for uid, transcripts in by_user.items():
        vecs = [v for t in transcripts for _, v in t.turns]
        feats[uid] = np.mean(vecs, axis=0)
    return feats


def fit_split_classifier(
    features: dict[int, np.ndarray],
    labels: dict[int, int],
    train_ids: list[int],
    config: ExperimentConfig,
    split_index: int,
) -> clf.ClassifierModel:
    X = np.array([features[uid] for uid in train_ids])
    y = np.array([labels[uid] for uid in train_ids])
    return clf.fit(
        X,
        y,
        l2=config.classifier_l2,
        kind=config.classifier_kind,
        seed=derived_seed(config.master_seed, 20, split_index),
    )


def train_split_agent(
    simulators: dict[int, SimulatorModel],
    labels: dict[int, int],
    train_ids: list[int],
    train_transcripts: list[Transcript],
    classifier_model: clf.ClassifierModel,
    catalog: QuestionCatalog,
    config: ExperimentConfig,
    split_index: int,
) -> agent_mod.TrainResult:
    """Pre-train from the training corpus, then run the episode loop against
    the training users' simulators."""
    c = classifier_model.c
    h = config.sim.hidden
    state_dim = 2 * c + h + 3
    agent_cfg = agent_mod.AgentConfig(
        **{**asdict(config.agent), "seed": derived_seed(config.master_seed, 30, split_index)}
    )
    qnet = agent_mod.make_qnetwork(state_dim, catalog.d, agent_cfg.hidden_dims, agent_cfg.seed)
    train_sims = {uid: simulators[uid] for uid in train_ids}
    train_labels = {uid: labels[uid] for uid in train_ids}
    buffer = agent_mod.pretrain_from_corpus(
        qnet,
        train_transcripts,
        train_sims,
        train_labels,
        classifier_model,
        catalog,
        config.env,
        agent_cfg,
    )
    return agent_mod.train(
        qnet,
        train_sims,
        train_labels,
        classifier_model,
        catalog,
        config.env,
        agent_cfg,
        buffer=buffer,
    )


def greedy_rollout(
    qnet: nnet.DenseNet,
    env: DialogueEnv,
    budget: int,
) -> tuple[float, list[int]]:
    """Greedy masked policy for at most `budget` questions, goodbye forced at
    the budget; returns (final p_MCI, asked question ids excluding greeting)."""
    rng = np.random.default_rng(0)  # unused at epsilon=0
    state = env.reset()
    asked: list[int] = []
    while not env.done:
        if len(asked) >= budget:
            action = env.catalog.goodbye_id
        else:
            action = agent_mod.select_action(
                qnet, flatten(state), env.action_mask(), 0.0, rng
            )
        state, _, _ = env.step(action)
        asked.append(action)
    return float(state.class_probs[1]), asked


def evaluate_split(
    qnet: nnet.DenseNet,
    simulators: dict[int, SimulatorModel],
    labels: dict[int, int],
    test_ids: list[int],
    classifier_model: clf.ClassifierModel,
    catalog: QuestionCatalog,
    config: ExperimentConfig,
):
    """Per turn constraint: greedy rollout for each test user, metrics over
    the final p_MCI scores. Returns (metrics per constraint, traces at the
    largest constraint)."""
    per_constraint = {}
    top_traces: list[list[int]] = []
    max_t = max(config.turn_constraints)
    for t in config.turn_constraints:
        scores, y = [], []
        for uid in test_ids:
            env = DialogueEnv(catalog, simulators[uid], labels[uid], classifier_model, config.env)
            p_mci, asked = greedy_rollout(qnet, env, t)
            scores.append(p_mci)
            y.append(labels[uid])
            if t == max_t:
                top_traces.append(asked)
        per_constraint[t] = clf.binary_metrics(scores, y)
    return per_constraint, top_traces


def corpus_at_k(
    by_user: dict[int, list[Transcript]],
    labels: dict[int, int],
    test_ids: list[int],
    classifier_model: clf.ClassifierModel,
    catalog: QuestionCatalog,
    k: int,
) -> dict[str, float]:
    """Non-adaptive baseline: average the first k response embeddings of each
    test user's first conversation (greeting/parting responses excluded)."""
    scores, y = [], []
    for uid in test_ids:
        first = sorted(by_user[uid], key=lambda t: t.conversation_index)[0]
        vecs = [
            v
            for qid, v in first.turns
            if catalog.category_of(qid) not in ("greetings", "goodbye")
        ]
        feat = np.mean(vecs[:k], axis=0)
        scores.append(clf.predict_proba(classifier_model, feat)[1])
        y.append(labels[uid])
    return clf.binary_metrics(scores, y)


def policy_report(
    traces: list[list[int]],
    catalog: QuestionCatalog,
    windows=POLICY_WINDOWS,
) -> dict[str, list[tuple[int, int]]]:
    """Descending (question id, count) per turn window over all traces.

    Greeting and goodbye actions are structural (pinned opener / terminator),
    not content questions, and are excluded from the rankings."""
    out = {}
    for lo, hi in windows:
        counts: dict[int, int] = {}
        for trace in traces:
            for pos, qid in enumerate(trace, start=1):
                if lo <= pos <= hi and catalog.category_of(qid) not in ("greetings", "goodbye"):
                    counts[qid] = counts.get(qid, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        out[f"{lo}-{hi}"] = ranked
    return out


@dataclass
class Report:
    rl_metrics: dict  # split -> {constraint -> metrics}
    corpus_metrics: dict  # split -> {constraint -> metrics}
    rankings: dict  # window -> [(question_id, count), ...]
    loo_mse: list[float]
    learning_curves: dict  # split -> per-episode records
    config: dict
    traces: list[dict] = field(default_factory=list)  # {split, user_id, questions}

    def mean_std(self, which: str, constraint: int) -> tuple[dict, dict]:
        cells = self.rl_metrics if which == "rl" else self.corpus_metrics
        keys = ("auc", "sensitivity", "specificity", "f1")
        values = {k: [cells[s][constraint][k] for s in sorted(cells)] for k in keys}
        mean = {k: float(np.mean(v)) for k, v in values.items()}
        std = {k: float(np.std(v)) for k, v in values.items()}
        return mean, std


def run_experiment(config: ExperimentConfig, progress=None) -> Report:
    catalog = build_catalog(config)
    cohort, transcripts, labels = build_world(config, catalog)
    by_user = transcripts_by_user(transcripts)
    if progress:
        progress("fitting user simulators")
    simulators = fit_all_simulators(by_user, catalog, config.sim, config.master_seed)

    loo_values = []
    for uid in sorted(by_user)[: config.loo_users]:
        if len(by_user[uid]) < 2:
            continue
        cfg = SimulatorConfig(
            **{**asdict(config.sim), "seed": derived_seed(config.master_seed, 40, uid)}
        )
        loo_values.append(leave_one_out_mse(by_user[uid], catalog, cfg))

    features = user_average_features(by_user)
    splits = clf.stratified_shuffle_split(
        np.array([labels[uid] for uid in sorted(labels)]), config.split
    )
    rl_metrics, corpus_metrics, curves = {}, {}, {}
    trace_rows: list[dict] = []
    for s, (train_ids, test_ids) in enumerate(splits):
        if progress:
            progress(f"split {s}: classifier + agent + eval")
        model = fit_split_classifier(features, labels, train_ids, config, s)
        train_transcripts = [t for t in transcripts if t.user_id in set(train_ids)]
        result = train_split_agent(
            simulators, labels, train_ids, train_transcripts, model, catalog, config, s
        )
        per_constraint, traces = evaluate_split(
            result.qnet, simulators, labels, test_ids, model, catalog, config
        )
        rl_metrics[s] = per_constraint
        corpus_metrics[s] = {
            t: corpus_at_k(by_user, labels, test_ids, model, catalog, t)
            for t in config.turn_constraints
        }
        curves[s] = result.curve
        for uid, asked in zip(test_ids, traces):
            trace_rows.append({"split": s, "user_id": int(uid), "questions": list(asked)})
    rankings = policy_report([row["questions"] for row in trace_rows], catalog)
    return Report(
        rl_metrics, corpus_metrics, rankings, loo_values, curves, config.to_dict(), trace_rows
    )


def write_metrics_csv(report: Report, path: str):
    """One row per (model, split, constraint); float repr for byte stability."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "split", "constraint", "auc", "sensitivity", "specificity", "f1"])
        for name, cells in (("rl", report.rl_metrics), ("corpus", report.corpus_metrics)):
            for s in sorted(cells):
                for t in sorted(cells[s]):
                    m = cells[s][t]
                    writer.writerow(
                        [name, s, t, repr(m["auc"]), repr(m["sensitivity"]),
                         repr(m["specificity"]), repr(m["f1"])]
                    )


def write_rankings_csv(report: Report, catalog: QuestionCatalog, path: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "rank", "question_id", "category", "text", "count"])
        for window, ranked in report.rankings.items():
            for rank, (qid, count) in enumerate(ranked, start=1):
                q = catalog.questions[qid]
                writer.writerow([window, rank, qid, q.category, q.text, count])


def write_report_json(report: Report, path: str):
    constraints = sorted(next(iter(report.rl_metrics.values())).keys()) if report.rl_metrics else []
    summary = {}
    for which in ("rl", "corpus"):
        summary[which] = {}
        for t in constraints:
            mean, std = report.mean_std(which, t)
            summary[which][str(t)] = {"mean": mean, "std": std}
    doc = {
        "summary": summary,
        "rankings": report.rankings,
        "loo_mse": {
            "values": report.loo_mse,
            "mean": float(np.mean(report.loo_mse)) if report.loo_mse else None,
        },
        "reference_results": REFERENCE_RESULTS,
        "config": report.config,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def render_figures(report: Report, out_dir: str) -> list[str]:
    """AUC-vs-budget curve, simulator LOO MSE histogram, learning curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    constraints = sorted(next(iter(report.rl_metrics.values())).keys())

    fig, ax = plt.subplots(figsize=(6, 4))
    for which, label, color in (("rl", "adaptive policy", "C0"), ("corpus", "corpus order", "C1")):
        means = [report.mean_std(which, t)[0]["auc"] for t in constraints]
        stds = [report.mean_std(which, t)[1]["auc"] for t in constraints]
        ax.errorbar(constraints, means, yerr=stds, marker="o", capsize=3, label=label, color=color)
    ax.set_xlabel("turn budget")
    ax.set_ylabel("AUC (mean ± std over splits)")
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = os.path.join(out_dir, "auc_vs_turns.png")
    fig.savefig(p, dpi=150)
    plt.close(fig)
    paths.append(p)

    if report.loo_mse:
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.hist(report.loo_mse, bins=min(20, max(5, len(report.loo_mse))), color="C2")
        ax.set_xlabel("leave-one-out MSE per turn")
        ax.set_ylabel("users")
        fig.tight_layout()
        p = os.path.join(out_dir, "loo_mse_hist.png")
        fig.savefig(p, dpi=150)
        plt.close(fig)
        paths.append(p)

    if report.learning_curves:
        fig, ax = plt.subplots(figsize=(6, 4))
        for s, curve in sorted(report.learning_curves.items()):
            returns = [rec["return"] for rec in curve]
            ax.plot(np.convolve(returns, np.ones(10) / 10, mode="valid"), alpha=0.6,
                    label=f"split {s}" if int(s) < 3 else None)
        ax.set_xlabel("episode")
        ax.set_ylabel("return (10-episode moving mean)")
        ax.legend()
        ax.grid(alpha=0.3)
        fig.tight_layout()
        p = os.path.join(out_dir, "learning_curves.png")
        fig.savefig(p, dpi=150)
        plt.close(fig)
        paths.append(p)
    return paths


def write_traces_jsonl(report: Report, path: str):
    """One line per evaluated test user: the questions the policy asked."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in report.traces:
            fh.write(json.dumps(row) + "\n")


def write_outputs(report: Report, catalog: QuestionCatalog, out_dir: str, figures: bool = True):
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(report, os.path.join(out_dir, "metrics.csv"))
    write_rankings_csv(report, catalog, os.path.join(out_dir, "policy_rankings.csv"))
    write_report_json(report, os.path.join(out_dir, "report.json"))
    write_traces_jsonl(report, os.path.join(out_dir, "traces.jsonl"))
    if figures:
        render_figures(report, out_dir)


# ---------------------------------------------------------------------------
# artifact persistence


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def save_pipeline(
    out_dir: str,
    config: ExperimentConfig,
    transcripts: list[Transcript],
    labels: dict[int, int],
    simulators: dict[int, SimulatorModel],
    classifier_model: clf.ClassifierModel | None = None,
    qnet: nnet.DenseNet | None = None,
) -> str:
    """Write every artifact plus a manifest with the master seed and hashes."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    tpath = os.path.join(out_dir, "transcripts.jsonl")
    save_transcripts(transcripts, labels, tpath)
    paths["transcripts"] = "transcripts.jsonl"
    simdir = os.path.join(out_dir, "simulators")
    os.makedirs(simdir, exist_ok=True)
    for uid, model in simulators.items():
        save_simulator(model, os.path.join(simdir, f"{uid}.json"))
    paths["simulators"] = "simulators"
    if classifier_model is not None:
        cpath = os.path.join(out_dir, "classifier.json")
        clf.save_classifier(classifier_model, cpath)
        paths["classifier"] = "classifier.json"
    if qnet is not None:
        qpath = os.path.join(out_dir, "qnet.json")
        with open(qpath, "w", encoding="utf-8") as fh:
            fh.write(nnet.to_json(qnet))
        paths["qnet"] = "qnet.json"
    hashes = {}
    for key, rel in paths.items():
        full = os.path.join(out_dir, rel)
        if os.path.isdir(full):
            hashes[key] = {
                name: _sha256(os.path.join(full, name)) for name in sorted(os.listdir(full))
            }
        else:
            hashes[key] = _sha256(full)
    manifest = {
        "master_seed": config.master_seed,
        "config": config.to_dict(),
        "paths": paths,
        "hashes": hashes,
    }
    mpath = os.path.join(out_dir, "manifest.json")
    with open(mpath, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return mpath


def load_pipeline(manifest_path: str):
    """Reload saved artifacts; validates embedding-dimension consistency."""
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(manifest_path)
    config = ExperimentConfig.from_dict(manifest["config"])
    paths = manifest["paths"]
    transcripts, labels = load_transcripts(os.path.join(base, paths["transcripts"]))
    simdir = os.path.join(base, paths["simulators"])
    simulators = {}
    for name in sorted(os.listdir(simdir)):
        model = load_simulator(os.path.join(simdir, name))
        simulators[model.user_id] = model
    classifier_model = None
    if "classifier" in paths:
        classifier_model = clf.load_classifier(os.path.join(base, paths["classifier"]))
        for model in simulators.values():
            if model.c != classifier_model.c:
                raise ValueError(
                    f"user {model.user_id} simulator dim {model.c} != "
                    f"classifier dim {classifier_model.c}"
                )
    qnet = None
    if "qnet" in paths:
        with open(os.path.join(base, paths["qnet"]), encoding="utf-8") as fh:
            qnet = nnet.from_json(fh.read())
    return config, transcripts, labels, simulators, classifier_model, qnet


# ---------------------------------------------------------------------------
# interview mode


class ExternalEmbedder:
    """Responder backed by a sidecar process speaking a line protocol:
    one question text line in, one line of c space-separated floats out."""

    def __init__(self, command: list[str], catalog: QuestionCatalog, c: int, h: int):
        self.catalog = catalog
        self.c = c
        self.d = catalog.d
        self._h = h
        self.proc = subprocess.Popen(
            command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def respond(self, question_id: int) -> np.ndarray:
        text = self.catalog.questions[question_id].text
        assert self.proc.stdin and self.proc.stdout
        self.proc.stdin.write(text + "\n")
        self.proc.stdin.flush()
        line = self.proc.stdout.readline()
        if not line:
            raise RuntimeError("embedder process closed its output stream")
        values = [float(x) for x in line.split()]
        if len(values) != self.c:
            raise RuntimeError(f"embedder returned {len(values)} floats, expected {self.c}")
        return np.asarray(values)

    def fingerprint(self) -> np.ndarray:
        # no trained per-user simulator exists for a live respondent
        return np.zeros(self._h)

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


def interview(
    qnet: nnet.DenseNet,
    classifier_model: clf.ClassifierModel,
    catalog: QuestionCatalog,
    responder,
    env_config: EnvConfig,
    budget: int | None = None,
    emit=None,
) -> dict:
    """Run one live session: agent asks, responder embeds the answers.

    Returns {questions, p_mci_trace, prediction}. The responder's true label
    is unknown, so rewards are not meaningful and are discarded.
    """
    budget = budget if budget is not None else env_config.T_max
    env = DialogueEnv(catalog, responder, 0, classifier_model, env_config)
    session = {"questions": [], "p_mci_trace": [], "prediction": None}
    try:
        state = env.reset()
        if emit:
            emit(f"[turn 0] {catalog.questions[catalog.greeting_id].text}")
        rng = np.random.default_rng(0)
        while not env.done:
            if len(session["questions"]) >= budget:
                action = catalog.goodbye_id
            else:
                action = agent_mod.select_action(
                    qnet, flatten(state), env.action_mask(), 0.0, rng
                )
            state, _, _ = env.step(action)
            session["questions"].append(action)
            session["p_mci_trace"].append(float(state.class_probs[1]))
            if emit:
                emit(
                    f"[turn {state.turn}] {catalog.questions[action].text}"
                    f"  (p_mci={state.class_probs[1]:.3f})"
                )
    except Exception:
        session["aborted"] = True
        raise
    finally:
        session["prediction"] = (
            int(state.class_probs[1] >= 0.5) if session["p_mci_trace"] else None
        )
    return session
