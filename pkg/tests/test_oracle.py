import numpy as np
import pytest

import packsel.oracle as oracle
from packsel.env import EnvConfig, reset, step
from packsel.instances import ItemSet, point_distribution, sample_distribution
from packsel.oracle import (
    Decision,
    FrequencyTable,
    MctsConfig,
    _Node,
    distribution_sampler,
    exhaustive_best,
    fixed_sampler,
    inclusion_rate,
    mcts_decide,
    mcts_episode,
    policy_induced_vs_optimal,
    proposal_ranking,
)
from packsel.policy import Architecture, PolicyParams, init_params

# A 4x1x1 slot with a unit cube at x=1: the next unit cube at x=0 leaves room
# for the final 2-long bar (return 1.0), anywhere else it does not (0.5).
SLOT = EnvConfig(container=(4, 1, 1), heuristics=("ems", "heightmap"), max_candidates=2)


def slot_state():
    s = reset([(1, 1, 1), (1, 1, 1), (2, 1, 1)], SLOT)
    s = step(s, int(np.flatnonzero(s.candidates.positions[:, 0] == 1)[0]))
    return s


def count_leaves(state):
    if state.terminal:
        return 1
    return sum(count_leaves(step(state, a)) for a in range(len(state.candidates)))


def test_deterministic_two_action_frequencies():
    s = slot_state()
    assert s.candidates.positions[:, 0].tolist() == [0, 2]
    best, table = mcts_decide(s, fixed_sampler(s.items[s.t + 1 :]), MctsConfig(simulations=50, n_futures=1))
    assert best == 0
    assert table.probs.tolist() == [1.0, 0.0]


def test_zero_exploration_is_greedy_on_means():
    node = _Node(slot_state())
    node.untried = []
    node.N, node.n, node.w = 2, np.array([1.0, 1.0]), np.array([0.5, 1.0])
    assert node.ucb(0.0) == 1


def test_exhaustive_single_action_chain():
    s = reset([(4, 4, 2), (4, 4, 2)], EnvConfig(container=(4, 4, 4)))
    assert len(s.candidates) == 1
    assert exhaustive_best(s) == (0, 1.0)


def test_exhaustive_pinned_small_instance():
    rng = np.random.default_rng(2024)
    items = rng.choice([2, 3], size=(3, 3)).astype(float)
    s = reset(items, EnvConfig(container=(6, 6, 6)))
    a, v = exhaustive_best(s)
    assert items.tolist() == [[2.0, 3.0, 2.0], [2.0, 2.0, 2.0], [3.0, 3.0, 3.0]]
    # all three fit, so the optimum is their total volume
    assert (a, v) == (0, pytest.approx(47 / 216))


def test_exhaustive_guard():
    s = reset([(1, 1, 1)] * 12, EnvConfig(container=(6, 6, 6)))
    with pytest.raises(ValueError):
        exhaustive_best(s, guard=1e3)
    assert exhaustive_best(s, depth_cap=1)[1] == pytest.approx(1 / 216)


def test_terminal_state_rejected():
    done = step(reset([(4, 4, 4)], EnvConfig(container=(4, 4, 4))), 0)
    with pytest.raises(ValueError):
        mcts_decide(done, fixed_sampler([]))
    with pytest.raises(ValueError):
        exhaustive_best(done)


def test_config_validation():
    with pytest.raises(ValueError):
        MctsConfig(simulations=0)
    with pytest.raises(ValueError):
        MctsConfig(c=-1)


def test_uct_agrees_with_exhaustive_on_small_trees():
    cfg = EnvConfig(container=(6, 6, 6), max_candidates=3)
    checked = 0
    for seed in range(100):
        items = np.random.default_rng(seed).choice([2, 3, 4], size=(4, 3)).astype(float)
        s = reset(items, cfg)
        if s.terminal or count_leaves(s) > 50:
            continue
        best, _ = mcts_decide(s, fixed_sampler(items[1:]), MctsConfig(simulations=10_000, n_futures=1, pre_evaluate=False))
        assert best == exhaustive_best(s)[0]
        checked += 1
    assert checked >= 20


def test_frequency_table_normalised_and_merge_commutes():
    d = sample_distribution(ItemSet("toy", (2, 4)), 0)
    s = reset(d.sample_items(np.random.default_rng(0), 6), EnvConfig(container=(8, 8, 8)))
    _, t1 = mcts_decide(s, distribution_sampler(d), MctsConfig(simulations=40, n_futures=7, seed=1))
    _, t2 = mcts_decide(s, distribution_sampler(d), MctsConfig(simulations=40, n_futures=5, seed=2))
    assert abs(t1.probs.sum() - 1.0) <= 1 / t1.n_samples
    m1, m2 = t1.merge(t2), t2.merge(t1)
    assert np.array_equal(m1.counts, m2.counts) and m1.n_samples == 12
    assert abs(m1.probs.sum() - 1.0) <= 1e-12


def test_restriction_limits_root_actions():
    d = sample_distribution(ItemSet("toy", (2, 4)), 1)
    s = reset(d.sample_items(np.random.default_rng(1), 6), EnvConfig(container=(8, 8, 8)))
    allowed = np.array([1, 3])
    best, table = mcts_decide(s, distribution_sampler(d), MctsConfig(simulations=30, n_futures=4), restrict=allowed)
    assert best in allowed
    mask = np.ones(len(s.candidates), dtype=bool)
    mask[allowed] = False
    assert not table.counts[mask].any()


def decisions(n=6):
    d = sample_distribution(ItemSet("toy", (2, 4)), 3)
    cfg = EnvConfig(container=(8, 8, 8), max_candidates=10**6)
    rng = np.random.default_rng(3)
    out = []
    for _ in range(n):
        s = reset(d.sample_items(rng, 8), cfg)
        for _ in range(int(rng.integers(0, 3))):
            s = step(s, int(rng.integers(len(s.candidates))))
        out.append(Decision(s, distribution_sampler(d)))
    return out


def test_inclusion_monotone_and_complete():
    params = PolicyParams(Architecture(), np.random.default_rng(0).normal(0, 1, Architecture().size))
    dec = decisions()
    big = max(len(x.state.candidates) for x in dec)
    rates = inclusion_rate(params, dec, [1, 2, 3, 5, big, None], MctsConfig(simulations=30, n_futures=4))
    vals = list(rates.values())
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert rates[None] == 1.0 and rates[big] == 1.0


def test_random_scores_top1_rate_is_chance(monkeypatch):
    state = reset([(1, 1, 1)] * 2, EnvConfig(container=(10, 1, 1), heuristics=("heightmap",)))
    assert len(state.candidates) == 10
    monkeypatch.setattr(oracle, "mcts_decide", lambda s, smp, cfg, restrict=None: (4, None))
    monkeypatch.setattr(oracle, "featurize_all", lambda s: np.eye(10))
    rng = np.random.default_rng(0)
    n = 4000
    hits = sum(
        inclusion_rate(PolicyParams(Architecture(n_features=10, layers=0), np.r_[rng.normal(size=10), 0.0]),
                       [Decision(state, None)], [1])[1]
        for _ in range(n)
    )
    assert abs(hits / n - 0.1) <= 3 * np.sqrt(0.09 / n)


def test_rank_curves():
    params = PolicyParams(Architecture(), np.random.default_rng(1).normal(0, 1, Architecture().size))
    dec = decisions(4)
    pc, oc = policy_induced_vs_optimal(params, dec, MctsConfig(simulations=30, n_futures=4))
    assert pc.sum() == pytest.approx(1.0) and oc.sum() == pytest.approx(1.0)
    assert np.all(np.diff(pc) <= 1e-12)
    same = []
    for x in dec:
        order, probs = proposal_ranking(params, x.state)
        same.append(FrequencyTable(probs.copy(), 1))
    pc2, oc2 = policy_induced_vs_optimal(params, dec, tables=same)
    assert np.allclose(pc2, oc2)


def test_mcts_episode_valid_packing():
    d = point_distribution((2, 2, 2))
    cfg = EnvConfig(container=(4, 4, 4))
    r = mcts_episode(d.sample_items(np.random.default_rng(0), 9), cfg, distribution_sampler(d), MctsConfig(simulations=20, n_futures=2))
    assert r.uti == 1.0
    p = init_params(Architecture(), 0)
    r2 = mcts_episode(d.sample_items(np.random.default_rng(0), 9), cfg, distribution_sampler(d), MctsConfig(simulations=20, n_futures=2), proposal=p, k=2)
    assert r2.violations() == []
