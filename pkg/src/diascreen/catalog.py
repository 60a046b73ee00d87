"""Question catalog: the discrete action space, categories, and policy masking.

Questions live in 16 fixed categories. Follow-up questions (confirmation /
clarification) are masked out until the conversation has touched at least
one topic category; the mask is recomputed from the raw action history each
turn so it stays trivially testable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = frozenset(
    {
        "greetings",
        "activity",
        "living_situation",
        "travel",
        "entertainment",
        "social",
        "picture",
        "tech",
        "occupation",
        "hobbies",
        "family",
        "pets",
        "confirmation",
        "clarification",
        "goodbye",
        "unspecified",
    }
)

TOPIC_CATEGORIES = frozenset(
    {
        "social",
        "activity",
        "tech",
        "picture",
        "hobbies",
        "occupation",
        "travel",
        "entertainment",
        "family",
    }
)

MASKED_CATEGORIES = frozenset({"confirmation", "clarification"})


class CatalogError(ValueError):
    """Malformed catalog file or invalid catalog contents."""


@dataclass(frozen=True)
class Question:
    id: int
    category: str
    text: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise CatalogError(f"unknown category {self.category!r} for question {self.id}")


@dataclass(frozen=True)
class QuestionCatalog:
    questions: tuple[Question, ...]

    def __post_init__(self):
        ids = [q.id for q in self.questions]
        if ids != list(range(len(ids))):
            raise CatalogError("question ids must be dense 0..d-1 in order")
        cats = {q.category for q in self.questions}
        if "greetings" not in cats or "goodbye" not in cats:
            raise CatalogError("catalog must contain at least one greeting and one goodbye")

    @property
    def d(self) -> int:
        return len(self.questions)

    def category_of(self, question_id: int) -> str:
        self._check_id(question_id)
        return self.questions[question_id].category

    def ids_in_category(self, category: str) -> list[int]:
        return [q.id for q in self.questions if q.category == category]

    @property
    def greeting_id(self) -> int:
        return self.ids_in_category("greetings")[0]

    @property
    def goodbye_id(self) -> int:
        return self.ids_in_category("goodbye")[0]

    def is_goodbye(self, question_id: int) -> bool:
        return self.category_of(question_id) == "goodbye"

    def _check_id(self, question_id: int):
        if not 0 <= question_id < self.d:
            raise ValueError(f"question id {question_id} out of range [0, {self.d})")

    def encode_onehot(self, question_id: int) -> np.ndarray:
        self._check_id(question_id)
        vec = np.zeros(self.d)
        vec[question_id] = 1.0
        return vec

    def mask_vector(self, action_history: list[int]) -> np.ndarray:
        """0/1 vector; follow-up categories are 0 until a topic has come up."""
        topic_seen = False
        for qid in action_history:
            self._check_id(qid)
            if self.questions[qid].category in TOPIC_CATEGORIES:
                topic_seen = True
        mask = np.ones(self.d)
        if not topic_seen:
            for q in self.questions:
                if q.category in MASKED_CATEGORIES:
                    mask[q.id] = 0.0
        return mask


def load_catalog(path: str) -> QuestionCatalog:
    """Parse a tab-separated catalog file: id <TAB> category <TAB> text."""
    questions = []
    seen_ids = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CatalogError(f"line {lineno}: expected 3 tab-separated fields")
            try:
                qid = int(parts[0])
            except ValueError:
                raise CatalogError(f"line {lineno}: bad id {parts[0]!r}") from None
            if qid in seen_ids:
                raise CatalogError(f"line {lineno}: duplicate id {qid}")
            seen_ids.add(qid)
            if parts[1] not in CATEGORIES:
                raise CatalogError(f"line {lineno}: unknown category {parts[1]!r}")
            questions.append(Question(qid, parts[1], parts[2]))
    questions.sort(key=lambda q: q.id)
    if not questions:
        raise CatalogError("empty catalog file")
    return QuestionCatalog(tuple(questions))


def save_catalog(catalog: QuestionCatalog, path: str):
    with open(path, "w", encoding="utf-8") as fh:
        for q in catalog.questions:
            fh.write(f"{q.id}\t{q.category}\t{q.text}\n")


# Built-in 107-question catalog. Slot tokens like <activity> are kept as
# literal strings; they are never filled with concrete values here.
_DEFAULT_ENTRIES: list[tuple[str, list[str]]] = [
    ("greetings", [
        "Hi, how are you today?",
        "Good morning, how have you been?",
        "Hello, it is nice to see you again.",
    ]),
    ("activity", [
        "Did you go outside lately?",
        "So what did you do yesterday?",
        "What did you do this morning?",
        "Have you been out for a walk recently?",
        "Did you do any <activity> this week?",
        "What are your plans for today?",
        "Did you run any errands lately?",
        "Have you done any cooking recently?",
        "Did you get any exercise this week?",
        "What did you do over the weekend?",
    ]),
    ("living_situation", [
        "How do you like your neighborhood?",
        "Have you lived in your home for a long time?",
        "Do you live alone or with someone?",
        "How is the weather where you live?",
        "Is there anything new around your house?",
        "Do you do your own shopping?",
    ]),
    ("travel", [
        "Have you traveled anywhere recently?",
        "Where did you go on your last trip?",
        "Do you have any trips planned?",
        "What is your favorite place to visit?",
        "Have you ever been to <place>?",
        "Do you like traveling by car or by plane?",
        "What was the most memorable trip you have taken?",
        "Did you visit anyone out of town lately?",
    ]),
    ("entertainment", [
        "Did you watch anything interesting on television lately?",
        "Have you seen any good movies recently?",
        "Do you listen to music?",
        "What kind of shows do you enjoy?",
        "Have you read any good books lately?",
        "Did you watch the news today?",
        "Do you follow any sports?",
        "What did you think of <show>?",
    ]),
    ("social", [
        "Did you run into any familiar faces lately?",
        "Where did you have dinner?",
        "Have you talked with any friends this week?",
        "Did you get together with anyone recently?",
        "How was your visit with <person>?",
        "Have you been to any gatherings lately?",
        "Did anyone stop by to see you?",
        "Have you spoken with your neighbors recently?",
        "Did you go out to eat with anyone this week?",
        "Have you made any new acquaintances lately?",
    ]),
    ("picture", [
        "What do you see in this picture?",
        "Where do you think this picture was taken?",
        "When do you think this picture was taken?",
        "Who do you think is in this picture?",
        "What is happening in this picture?",
        "Does this picture remind you of anything?",
        "What do you notice first in this picture?",
        "How does this picture make you feel?",
    ]),
    ("tech", [
        "How are you with the computer?",
        "Did you use your computer lately?",
        "Do you use a cell phone?",
        "Have you tried video calling with anyone?",
        "Do you use the internet to look things up?",
        "Did you send any emails this week?",
        "Do you ever shop online?",
        "Has any gadget been giving you trouble?",
    ]),
    ("occupation", [
        "What kind of work did you do?",
        "How did you get started in your line of work?",
        "What did you enjoy most about your job?",
        "Did you work with many people?",
        "How long did you work at <workplace>?",
        "Do you miss anything about working?",
        "What was a typical day at work like for you?",
        "Did your work involve any travel?",
    ]),
    ("hobbies", [
        "What do you like to do for fun?",
        "Do you have any hobbies you are working on?",
        "Have you done any gardening lately?",
        "Do you enjoy puzzles or games?",
        "Have you been doing any <hobby> recently?",
        "What hobby have you kept up the longest?",
        "Did you make anything recently?",
        "Is there a new hobby you would like to try?",
    ]),
    ("family", [
        "How is your family doing?",
        "Have you talked with your children lately?",
        "Do you have any grandchildren?",
        "Did any family visit you recently?",
        "How is <family member> doing?",
        "Are you planning any family get-togethers?",
        "Where does your family live?",
        "Did you hear any news from your relatives?",
    ]),
    ("pets", [
        "Do you have any pets?",
        "How is your pet doing?",
        "Did you have pets growing up?",
        "What is your pet's name?",
        "Does your pet keep you busy?",
        "Have you seen any animals around your home?",
    ]),
    ("confirmation", [
        "So you mentioned <topic>, is that right?",
        "Did I hear you say <detail>?",
        "Just to confirm, that was <event>?",
        "You said that happened <time>, correct?",
        "Is that the same <topic> you mentioned before?",
    ]),
    ("clarification", [
        "Can you elaborate on that?",
        "Could you tell me more about <topic>?",
        "What did you mean by <phrase>?",
        "Can you walk me through that again?",
        "Could you remind me when that was?",
    ]),
    ("goodbye", [
        "It was lovely talking with you, goodbye.",
        "Thank you for your time today, goodbye.",
        "Take care, we will talk again soon.",
    ]),
    ("unspecified", [
        "<unspecified scheduling comment>",
        "<unspecified picture comment>",
        "<unspecified health comment>",
    ]),
]


def default_catalog() -> QuestionCatalog:
    """The built-in 107-question catalog."""
    questions = []
    next_id = 0
    for category, texts in _DEFAULT_ENTRIES:
        for text in texts:
            questions.append(Question(next_id, category, text))
            next_id += 1
    return QuestionCatalog(tuple(questions))


def make_synthetic_catalog(d: int) -> QuestionCatalog:
    """A small d-question catalog with the same category machinery.

    Always includes one greeting, one goodbye, one confirmation and one
    clarification; the remainder cycles through the topic categories.
    Requires d >= 5.
    """
    if d < 5:
        raise CatalogError("synthetic catalog needs at least 5 questions")
    topics = sorted(TOPIC_CATEGORIES)
    questions = [
        Question(0, "greetings", "Hi, how are you today?"),
        Question(1, "confirmation", "So you mentioned <topic>, is that right?"),
        Question(2, "clarification", "Can you elaborate on that?"),
    ]
    for qid in range(3, d - 1):
        category = topics[(qid - 3) % len(topics)]
        questions.append(Question(qid, category, f"Synthetic {category} question {qid}?"))
    questions.append(Question(d - 1, "goodbye", "It was lovely talking with you, goodbye."))
    return QuestionCatalog(tuple(questions))
