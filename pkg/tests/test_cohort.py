import numpy as np
import pytest

from diascreen import classifier as clf
from diascreen import cohort as coh
from diascreen.catalog import make_synthetic_catalog


@pytest.fixture(scope="module")
def catalog():
    return make_synthetic_catalog(10)


def small_spec(**over):
    base = dict(
        n_users=20,
        c=8,
        discriminative_ids=(3, 4),
        delta=1.5,
        sigma_user=0.05,
        sigma_noise=0.3,
        conversations_per_user=2,
        turns_range=(5, 8),
    )
    base.update(over)
    return coh.CohortSpec(**base)


def test_class_balance_counts(catalog):
    spec = small_spec(n_users=60, class_balance=0.5)
    cohort = coh.generate_cohort(spec, catalog, seed=0)
    assert sum(u.label for u in cohort) == 30


def test_cohort_deterministic(catalog):
    spec = small_spec()
    a = coh.generate_cohort(spec, catalog, seed=5)
    b = coh.generate_cohort(spec, catalog, seed=5)
    for u1, u2 in zip(a, b):
        assert u1.label == u2.label
        assert np.array_equal(u1.question_means, u2.question_means)


def test_class_means_separated_by_delta_on_discriminative(catalog):
    spec = small_spec()
    cohort = coh.generate_cohort(spec, catalog, seed=1)
    pos = next(u for u in cohort if u.label == 1)
    neg = next(u for u in cohort if u.label == 0)
    for qid in range(catalog.d):
        gap = (pos.question_means[qid] - pos.offset) - (neg.question_means[qid] - neg.offset)
        expected = spec.delta if qid in spec.discriminative_ids else 0.0
        assert np.linalg.norm(gap) == pytest.approx(expected, abs=1e-9)


def test_delta_without_discriminative_ids_warns(catalog):
    spec = small_spec(discriminative_ids=())
    with pytest.warns(UserWarning):
        coh.generate_cohort(spec, catalog, seed=0)


def test_transcript_shape_and_order(catalog):
    spec = small_spec()
    cohort = coh.generate_cohort(spec, catalog, seed=2)
    transcripts = coh.generate_transcripts(cohort, spec, catalog, seed=2)
    assert len(transcripts) == spec.n_users * spec.conversations_per_user
    for t in transcripts:
        qids = t.question_ids
        assert qids[0] == catalog.greeting_id
        assert qids[-1] == catalog.goodbye_id
        inner = qids[1:-1]
        assert spec.turns_range[0] <= len(inner) <= spec.turns_range[1]
        # no immediate repetition
        for a, b in zip(inner, inner[1:]):
            assert a != b
        assert all(np.all(np.isfinite(v)) for _, v in t.turns)


def test_noiseless_responses_equal_user_means(catalog):
    spec = small_spec(sigma_noise=0.0)
    cohort = coh.generate_cohort(spec, catalog, seed=3)
    transcripts = coh.generate_transcripts(cohort, spec, catalog, seed=3)
    users = {u.user_id: u for u in cohort}
    for t in transcripts[:6]:
        for qid, v in t.turns:
            np.testing.assert_allclose(v, users[t.user_id].mean_response(qid), atol=1e-12)


def test_transcripts_deterministic(catalog):
    spec = small_spec()
    cohort = coh.generate_cohort(spec, catalog, seed=4)
    t1 = coh.generate_transcripts(cohort, spec, catalog, seed=9)
    t2 = coh.generate_transcripts(cohort, spec, catalog, seed=9)
    for a, b in zip(t1, t2):
        assert a.question_ids == b.question_ids
        for (_, v1), (_, v2) in zip(a.turns, b.turns):
            assert np.array_equal(v1, v2)


def test_null_cohort_auc_is_chance(catalog):
    """delta=0: Monte-Carlo over seeds, mean held-out AUC within 0.5 +/- 0.05."""
    spec = small_spec(delta=0.0, discriminative_ids=(), n_users=24)
    aucs = []
    for seed in range(20):
        cohort = coh.generate_cohort(spec, catalog, seed=seed)
        transcripts = coh.generate_transcripts(cohort, spec, catalog, seed=seed)
        by_user = coh.transcripts_by_user(transcripts)
        feats = {uid: np.mean([v for t in ts for _, v in t.turns], axis=0)
                 for uid, ts in by_user.items()}
        labels = {u.user_id: u.label for u in cohort}
        ids = sorted(labels)
        train, test = ids[: len(ids) // 2], ids[len(ids) // 2 :]
        model = clf.fit(
            np.array([feats[i] for i in train]),
            np.array([labels[i] for i in train]),
            l2=1e-2,
        )
        scores = [clf.predict_proba(model, feats[i])[1] for i in test]
        aucs.append(clf.auc(scores, [labels[i] for i in test]))
    assert abs(float(np.mean(aucs)) - 0.5) < 0.05


def test_transcript_store_round_trip(tmp_path, catalog):
    spec = small_spec(n_users=4)
    cohort = coh.generate_cohort(spec, catalog, seed=6)
    transcripts = coh.generate_transcripts(cohort, spec, catalog, seed=6)
    labels = {u.user_id: u.label for u in cohort}
    path = tmp_path / "transcripts.jsonl"
    coh.save_transcripts(transcripts, labels, str(path))
    loaded, loaded_labels = coh.load_transcripts(str(path))
    assert loaded_labels == labels
    for a, b in zip(transcripts, loaded):
        assert a.user_id == b.user_id and a.conversation_index == b.conversation_index
        for (q1, v1), (q2, v2) in zip(a.turns, b.turns):
            assert q1 == q2
            assert np.array_equal(v1, v2)


def test_spec_validation(catalog):
    with pytest.raises(ValueError):
        small_spec(class_balance=1.5).validate(catalog)
    with pytest.raises(ValueError):
        small_spec(turns_range=(5, 3)).validate(catalog)
    with pytest.raises(ValueError):
        small_spec(discriminative_ids=(99,)).validate(catalog)
