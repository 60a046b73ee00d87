import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diascreen import agent as agent_mod
from diascreen import classifier as clf
from diascreen import nnet
from diascreen.catalog import make_synthetic_catalog
from diascreen.cohort import CohortSpec, generate_cohort, generate_transcripts, transcripts_by_user
from diascreen.env import DialogueEnv, EnvConfig, Transition, flatten, state_dim
from diascreen.simulator import SimulatorConfig, SimulatorModel, fit_user_simulator


CATALOG = make_synthetic_catalog(8)


def test_masked_q_identity_with_all_ones():
    qnet = agent_mod.make_qnetwork(5, 4, (8,), seed=0)
    state = np.ones(5)
    q = nnet.predict(qnet, state)
    np.testing.assert_array_equal(agent_mod.masked_q(qnet, state, np.ones(4)), q)


def test_masked_q_zeroes_masked_entries():
    qnet = agent_mod.make_qnetwork(5, 4, (8,), seed=1)
    mask = np.array([1.0, 0.0, 1.0, 0.0])
    out = agent_mod.masked_q(qnet, np.ones(5), mask)
    assert out[1] == 0.0 and out[3] == 0.0
    assert np.all(out >= 0.0)


def test_masked_q_length_mismatch():
    qnet = agent_mod.make_qnetwork(5, 4, (8,), seed=0)
    with pytest.raises(ValueError):
        agent_mod.masked_q(qnet, np.ones(5), np.ones(3))


def test_qnetwork_output_nonnegative_everywhere():
    qnet = agent_mod.make_qnetwork(6, 5, (8, 8), seed=3)
    rng = np.random.default_rng(0)
    out = nnet.predict(qnet, rng.normal(scale=10, size=(200, 6)))
    assert np.all(out >= 0.0)


def test_select_action_greedy_argmax():
    # hand-built single linear layer producing fixed Q-values
    w = np.zeros((4, 1))
    b = np.array([0.0, 5.0, 3.0, 0.0])
    qnet = nnet.DenseNet([w], [b], ["relu"])
    rng = np.random.default_rng(0)
    assert agent_mod.select_action(qnet, np.zeros(1), np.ones(4), 0.0, rng) == 1


def test_select_action_tie_breaks_lowest_unmasked():
    qnet = nnet.DenseNet([np.zeros((4, 1))], [np.ones(4)], ["relu"])
    rng = np.random.default_rng(0)
    assert agent_mod.select_action(qnet, np.zeros(1), np.ones(4), 0.0, rng) == 0
    assert agent_mod.select_action(qnet, np.zeros(1), np.array([0.0, 1, 1, 1]), 0.0, rng) == 1


def test_select_action_epsilon_one_uniform():
    """Chi-square goodness of fit over 1e5 draws at epsilon=1."""
    qnet = nnet.DenseNet([np.zeros((5, 1))], [np.arange(5.0)], ["relu"])
    mask = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
    rng = np.random.default_rng(42)
    counts = np.zeros(5)
    n = 100_000
    for _ in range(n):
        counts[agent_mod.select_action(qnet, np.zeros(1), mask, 1.0, rng)] += 1
    assert counts[1] == 0 and counts[4] == 0
    expected = n / 3
    chi2 = float(np.sum((counts[[0, 2, 3]] - expected) ** 2 / expected))
    assert chi2 < 13.82  # p=0.001 cutoff, 2 dof


def test_select_action_all_masked_raises():
    qnet = agent_mod.make_qnetwork(2, 3, (4,), seed=0)
    with pytest.raises(RuntimeError):
        agent_mod.select_action(qnet, np.zeros(2), np.zeros(3), 0.5, np.random.default_rng(0))


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0),
       st.lists(st.booleans(), min_size=3, max_size=8))
@settings(max_examples=200, deadline=None)
def test_select_action_never_returns_masked(seed, eps, mask_bits):
    if not any(mask_bits):
        mask_bits[0] = True
    mask = np.array(mask_bits, dtype=float)
    qnet = agent_mod.make_qnetwork(3, len(mask_bits), (6,), seed=1)
    rng = np.random.default_rng(seed)
    a = agent_mod.select_action(qnet, np.ones(3), mask, eps, rng)
    assert mask[a] == 1.0


def _toy_transition(r, done, q_bias, mask):
    target = nnet.DenseNet([np.zeros((len(q_bias), 2))], [np.array(q_bias, dtype=float)], ["relu"])
    t = Transition(np.zeros(2), 0, r, np.zeros(2), done, np.array(mask, dtype=float))
    return t, target


def test_td_target_terminal_is_reward():
    t, target = _toy_transition(1000.0, True, [5.0, 7.0], [1, 1])
    assert agent_mod.td_target(t, target, 0.95) == 1000.0


def test_td_target_gamma_zero():
    t, target = _toy_transition(-10.0, False, [5.0, 7.0], [1, 1])
    assert agent_mod.td_target(t, target, 0.0) == -10.0


def test_td_target_hand_computed():
    t, target = _toy_transition(-10.0, False, [5.0, 7.0, 2.0], [1, 0, 1])
    # masked max over unmasked actions: max(5, 2) = 5
    assert agent_mod.td_target(t, target, 0.9) == pytest.approx(-10.0 + 0.9 * 5.0, abs=1e-12)


def test_replay_buffer_fifo_eviction_and_capacity():
    buf = agent_mod.ReplayBuffer(3, state_dim=2, n_actions=2, seed=0)
    for i in range(5):
        buf.add(Transition(np.full(2, i), 0, float(i), np.zeros(2), False, np.ones(2)))
    assert len(buf) == 3
    stored = sorted(buf.r.tolist())
    assert stored == [2.0, 3.0, 4.0]  # strictly FIFO: oldest evicted first


def test_replay_buffer_sampling_reproducible():
    def build():
        buf = agent_mod.ReplayBuffer(10, 2, 2, seed=7)
        for i in range(10):
            buf.add(Transition(np.full(2, i), i % 2, float(i), np.zeros(2), False, np.ones(2)))
        return buf

    s1 = build().sample(4)
    s2 = build().sample(4)
    for a, b in zip(s1, s2):
        assert np.array_equal(a, b)


def test_agent_config_validation():
    with pytest.raises(ValueError):
        agent_mod.AgentConfig(gamma=1.5)
    with pytest.raises(ValueError):
        agent_mod.AgentConfig(epsilon_start=0.1, epsilon_end=0.5)


# ---------------------------------------------------------------------------
# chain-MDP sanity harness: 5-state deterministic chain, actions {left, right};
# reaching the right end pays +10 and terminates, steps pay 0. Optimal policy
# is "right" everywhere; oracle is value iteration.


N_STATES = 5
N_ACTIONS = 2
GOAL = N_STATES - 1


def chain_step(s, a):
    s2 = min(s + 1, GOAL) if a == 1 else max(s - 1, 0)
    done = s2 == GOAL
    r = 10.0 if done else 0.0
    return s2, r, done


def value_iteration(gamma=0.9):
    v = np.zeros(N_STATES)
    for _ in range(500):
        nv = np.zeros(N_STATES)
        for s in range(GOAL):
            vals = []
            for a in range(N_ACTIONS):
                s2, r, done = chain_step(s, a)
                vals.append(r + (0.0 if done else gamma * v[s2]))
            nv[s] = max(vals)
        v = nv
    policy = []
    for s in range(GOAL):
        vals = []
        for a in range(N_ACTIONS):
            s2, r, done = chain_step(s, a)
            vals.append(r + (0.0 if done else gamma * v[s2]))
        policy.append(int(np.argmax(vals)))
    return policy


def onehot_state(s):
    v = np.zeros(N_STATES)
    v[s] = 1.0
    return v


def train_chain_dqn(seed, episodes=300, gamma=0.9):
    qnet = agent_mod.make_qnetwork(N_STATES, N_ACTIONS, (16,), seed=seed, output_bias=1.0)
    cfg = nnet.TrainConfig(learning_rate=5e-3, batch_size=16, seed=seed)
    opt = nnet.Optimizer(qnet, cfg)
    buf = agent_mod.ReplayBuffer(2000, N_STATES, N_ACTIONS, seed=seed)
    rng = np.random.default_rng(seed)
    target = qnet.copy()
    step_count = 0
    for ep in range(episodes):
        s = 0
        eps = max(0.05, 1.0 - ep / (episodes / 2))
        for _ in range(20):
            a = agent_mod.select_action(qnet, onehot_state(s), np.ones(N_ACTIONS), eps, rng)
            s2, r, done = chain_step(s, a)
            buf.add(Transition(onehot_state(s), a, r, onehot_state(s2), done, np.ones(N_ACTIONS)))
            if len(buf) >= 16:
                bs, ba, br, bs2, bdone, bmask = buf.sample(16)
                y = agent_mod.td_targets(target, br, bs2, bdone, bmask, gamma)
                nnet.train_step(qnet, bs, y, cfg, opt, action_index=ba)
            step_count += 1
            if step_count % 100 == 0:
                target = qnet.copy()
            if done:
                break
            s = s2
    return qnet


def chain_greedy_policy(qnet):
    rng = np.random.default_rng(0)
    return [
        agent_mod.select_action(qnet, onehot_state(s), np.ones(N_ACTIONS), 0.0, rng)
        for s in range(GOAL)
    ]


def test_chain_mdp_dqn_matches_value_iteration():
    optimal = value_iteration()
    hits = 0
    for seed in range(10):
        qnet = train_chain_dqn(seed)
        if chain_greedy_policy(qnet) == optimal:
            hits += 1
    assert hits >= 9


# ---------------------------------------------------------------------------
# dialogue-environment training plumbing


def build_dialogue_fixture():
    spec = CohortSpec(
        n_users=4,
        c=6,
        discriminative_ids=(3, 4),
        delta=2.0,
        sigma_user=0.05,
        sigma_noise=0.3,
        conversations_per_user=2,
        turns_range=(6, 9),
    )
    cohort = generate_cohort(spec, CATALOG, seed=0)
    transcripts = generate_transcripts(cohort, spec, CATALOG, seed=0)
    by_user = transcripts_by_user(transcripts)
    sim_cfg = SimulatorConfig(hidden=8, max_epochs=150, seed=0)
    sims = {uid: fit_user_simulator(ts, CATALOG, sim_cfg) for uid, ts in by_user.items()}
    labels = {u.user_id: u.label for u in cohort}
    feats = np.array(
        [np.mean([v for t in by_user[uid] for _, v in t.turns], axis=0) for uid in sorted(labels)]
    )
    model = clf.fit(feats, np.array([labels[u] for u in sorted(labels)]), l2=1e-2)
    return spec, transcripts, by_user, sims, labels, model


def test_transitions_from_transcript_counts():
    _, transcripts, _, sims, labels, model = build_dialogue_fixture()
    env_cfg = EnvConfig(T_max=35)
    t = transcripts[0]
    env = DialogueEnv(CATALOG, sims[t.user_id], labels[t.user_id], model, env_cfg)
    trs = agent_mod.transitions_from_transcript(t, env)
    assert len(trs) == len(t.turns) - 1  # one per post-greeting turn
    assert trs[-1].done
    assert sum(tr.done for tr in trs) == 1


def test_pretrain_empty_corpus_leaves_qnet_unchanged():
    _, _, _, sims, labels, model = build_dialogue_fixture()
    sd = state_dim(6, 8)
    qnet = agent_mod.make_qnetwork(sd, CATALOG.d, (8,), seed=0)
    before = [w.copy() for w in qnet.weights]
    agent_mod.pretrain_from_corpus(
        qnet, [], sims, labels, model, CATALOG, EnvConfig(), agent_mod.AgentConfig()
    )
    for w1, w2 in zip(before, qnet.weights):
        assert np.array_equal(w1, w2)


def test_pretrain_raises_terminal_preceding_values():
    _, transcripts, _, sims, labels, model = build_dialogue_fixture()
    sd = state_dim(6, 8)
    env_cfg = EnvConfig()
    # states preceding terminals, gathered independently of training
    probe_states = []
    for t in transcripts:
        env = DialogueEnv(CATALOG, sims[t.user_id], labels[t.user_id], model, env_cfg)
        trs = agent_mod.transitions_from_transcript(t, env)
        probe_states.append(trs[-1].s)
    probe = np.array(probe_states)
    qnet = agent_mod.make_qnetwork(sd, CATALOG.d, (16,), seed=0)
    fresh = nnet.predict(qnet, probe).max(axis=1).mean()
    agent_mod.pretrain_from_corpus(
        qnet, transcripts, sims, labels, model, CATALOG, env_cfg,
        agent_mod.AgentConfig(pretrain_passes=20, learning_rate=5e-3, seed=0),
    )
    trained = nnet.predict(qnet, probe).max(axis=1).mean()
    assert trained > fresh


def test_train_syncs_target_network():
    _, transcripts, _, sims, labels, model = build_dialogue_fixture()
    sd = state_dim(6, 8)
    qnet = agent_mod.make_qnetwork(sd, CATALOG.d, (8,), seed=0)
    cfg = agent_mod.AgentConfig(
        episodes_per_user=2, target_sync_episodes=8, batch_size=8, seed=0
    )
    result = agent_mod.train(
        qnet, sims, labels, model, CATALOG, EnvConfig(T_max=6), cfg
    )
    # 4 users x 2 episodes = 8 episodes: sync fires exactly at the end
    for w_online, w_target in zip(result.qnet.weights, result.target_qnet.weights):
        assert np.array_equal(w_online, w_target)
    assert len(result.curve) == 8
    assert all(rec["epsilon"] <= 1.0 for rec in result.curve)


def test_training_beats_immediate_goodbye():
    """A trained greedy policy outperforms saying goodbye right away.

    Raw episode returns are noisy under epsilon-greedy exploration, so the
    check compares the final greedy policy against the trivial baseline
    that ends every dialogue after the greeting.
    """
    spec = CohortSpec(
        n_users=6,
        c=6,
        discriminative_ids=(3, 4),
        delta=3.0,
        sigma_user=0.02,
        sigma_noise=0.2,
        conversations_per_user=2,
        turns_range=(8, 10),
    )
    cohort = generate_cohort(spec, CATALOG, seed=0)
    transcripts = generate_transcripts(cohort, spec, CATALOG, seed=0)
    by_user = transcripts_by_user(transcripts)
    sim_cfg = SimulatorConfig(hidden=8, max_epochs=200, seed=0)
    sims = {uid: fit_user_simulator(ts, CATALOG, sim_cfg) for uid, ts in by_user.items()}
    labels = {u.user_id: u.label for u in cohort}
    feats = np.array(
        [np.mean([v for t in by_user[uid] for _, v in t.turns], axis=0) for uid in sorted(labels)]
    )
    model = clf.fit(feats, np.array([labels[u] for u in sorted(labels)]), l2=1e-2)
    env_cfg = EnvConfig(T_max=8)

    def greedy_return(qnet, uid):
        env = DialogueEnv(CATALOG, sims[uid], labels[uid], model, env_cfg)
        state = env.reset()
        total = 0.0
        rng = np.random.default_rng(0)
        while not env.done:
            a = agent_mod.select_action(qnet, flatten(state), env.action_mask(), 0.0, rng)
            state, r, _ = env.step(a)
            total += r
        return total

    def goodbye_return(uid):
        env = DialogueEnv(CATALOG, sims[uid], labels[uid], model, env_cfg)
        env.reset()
        _, r, _ = env.step(CATALOG.goodbye_id)
        return r

    baseline = np.mean([goodbye_return(uid) for uid in sims])
    qnet = agent_mod.make_qnetwork(state_dim(6, 8), CATALOG.d, (16,), seed=1)
    cfg = agent_mod.AgentConfig(
        episodes_per_user=40, batch_size=16, learning_rate=2e-3,
        target_sync_episodes=10, seed=1,
    )
    buffer = agent_mod.pretrain_from_corpus(
        qnet, transcripts, sims, labels, model, CATALOG, env_cfg, cfg
    )
    agent_mod.train(qnet, sims, labels, model, CATALOG, env_cfg, cfg, buffer=buffer)
    trained = np.mean([greedy_return(qnet, uid) for uid in sims])
    assert trained > baseline + 100.0
