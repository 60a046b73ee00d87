"""Synthetic cohort generator: labeled users with known-discriminative questions.

Stands in for a real transcript corpus and sentence encoder. Each user has a
per-question mean response in R^c; a subset of "discriminative" questions
shifts the mean by delta along a fixed random unit direction for positive
(MCI) users, so ground truth about which questions carry signal is known
exactly. Per-turn responses add isotropic Gaussian noise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .catalog import QuestionCatalog


@dataclass
class CohortSpec:
    n_users: int = 60
    class_balance: float = 0.5
    c: int = 64
    discriminative_ids: tuple[int, ...] = ()
    delta: float = 2.0
    sigma_user: float = 0.05
    sigma_noise: float = 0.5
    conversations_per_user: int = 3  # corpus mean was ~2.81 conversations/user
    turns_range: tuple[int, int] = (30, 275)

    def validate(self, catalog: QuestionCatalog):
        if self.n_users < 1:
            raise ValueError("n_users must be positive")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")
        if self.c < 1:
            raise ValueError("embedding dimension c must be positive")
        if self.delta < 0 or self.sigma_user < 0 or self.sigma_noise < 0:
            raise ValueError("delta and std devs must be nonnegative")
        lo, hi = self.turns_range
        if not 1 <= lo <= hi:
            raise ValueError("turns_range must satisfy 1 <= min <= max")
        if self.conversations_per_user < 1:
            raise ValueError("conversations_per_user must be positive")
        for qid in self.discriminative_ids:
            if not 0 <= qid < catalog.d:
                raise ValueError(f"discriminative id {qid} outside catalog")


@dataclass
class UserRecord:
    user_id: int
    label: int  # 0 = normal aging, 1 = MCI
    offset: np.ndarray
    question_means: np.ndarray  # d x c

    def mean_response(self, question_id: int) -> np.ndarray:
        return self.question_means[question_id]


@dataclass
class Transcript:
    user_id: int
    conversation_index: int
    turns: list[tuple[int, np.ndarray]]  # (question_id, response vector)

    @property
    def question_ids(self) -> list[int]:
        return [qid for qid, _ in self.turns]


def _shared_structure(spec: CohortSpec, catalog: QuestionCatalog, seed: int):
    """Per-question base means and discriminative unit directions (seed-fixed)."""
    rng = np.random.default_rng(seed)
    base_means = rng.normal(0.0, 1.0 / np.sqrt(spec.c), size=(catalog.d, spec.c))
    directions = np.zeros((catalog.d, spec.c))
    for qid in sorted(spec.discriminative_ids):
        v = rng.normal(size=spec.c)
        directions[qid] = v / np.linalg.norm(v)
    return base_means, directions


def generate_cohort(spec: CohortSpec, catalog: QuestionCatalog, seed: int) -> list[UserRecord]:
    spec.validate(catalog)
    if spec.delta > 0 and not spec.discriminative_ids:
        import warnings

        warnings.warn("delta > 0 but no discriminative questions; labels carry no signal")
    base_means, directions = _shared_structure(spec, catalog, seed)
    n_pos = int(round(spec.n_users * spec.class_balance))
    labels = np.zeros(spec.n_users, dtype=int)
    labels[:n_pos] = 1
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    rng.shuffle(labels)
    users = []
    for uid in range(spec.n_users):
        user_rng = np.random.default_rng(np.random.SeedSequence([seed, 2, uid]))
        offset = user_rng.normal(0.0, spec.sigma_user, size=spec.c)
        means = base_means + labels[uid] * spec.delta * directions + offset
        users.append(UserRecord(uid, int(labels[uid]), offset, means))
    return users


def generate_transcripts(
    cohort: list[UserRecord],
    spec: CohortSpec,
    catalog: QuestionCatalog,
    seed: int,
) -> list[Transcript]:
    """Sample conversations: greeting first, goodbye last, uniform questions
    in between with no immediate repetition."""
    spec.validate(catalog)
    greeting = catalog.greeting_id
    goodbye = catalog.goodbye_id
    candidates = [
        q.id
        for q in catalog.questions
        if q.category not in ("greetings", "goodbye")
    ]
    transcripts = []
    lo, hi = spec.turns_range
    for user in cohort:
        for conv in range(spec.conversations_per_user):
            rng = np.random.default_rng(np.random.SeedSequence([seed, 3, user.user_id, conv]))
            n_inner = int(rng.integers(lo, hi + 1))
            qids = [greeting]
            prev = greeting
            for _ in range(n_inner):
                while True:
                    qid = int(rng.choice(candidates))
                    if qid != prev:
                        break
                qids.append(qid)
                prev = qid
            qids.append(goodbye)
            turns = []
            for qid in qids:
                noise = rng.normal(0.0, spec.sigma_noise, size=spec.c)
                turns.append((qid, user.mean_response(qid) + noise))
            transcripts.append(Transcript(user.user_id, conv, turns))
    return transcripts


def transcripts_by_user(transcripts: list[Transcript]) -> dict[int, list[Transcript]]:
    out: dict[int, list[Transcript]] = {}
    for t in transcripts:
        out.setdefault(t.user_id, []).append(t)
    for ts in out.values():
        ts.sort(key=lambda t: t.conversation_index)
    return out


def save_transcripts(transcripts: list[Transcript], labels: dict[int, int], path: str):
    """Line-delimited JSON, one conversation per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            rec = {
                "user_id": t.user_id,
                "conversation": t.conversation_index,
                "label": labels[t.user_id],
                "turns": [{"q": qid, "v": v.tolist()} for qid, v in t.turns],
            }
            fh.write(json.dumps(rec) + "\n")


def load_transcripts(path: str) -> tuple[list[Transcript], dict[int, int]]:
    transcripts = []
    labels: dict[int, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            turns = [(t["q"], np.asarray(t["v"], dtype=np.float64)) for t in rec["turns"]]
            transcripts.append(Transcript(rec["user_id"], rec["conversation"], turns))
            labels[rec["user_id"]] = rec["label"]
    return transcripts, labels
