import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packsel.env import (
    EnvConfig,
    final_reward,
    greedy_chooser,
    random_chooser,
    reset,
    run_episode,
    step,
    step_reward,
)
from packsel.geometry import verify_packing

CFG = EnvConfig(container=(10, 10, 10))


def test_full_item_fills_container():
    s = step(reset([(10, 10, 10)], CFG), 0)
    assert s.terminal
    assert final_reward(s) == 1.0
    assert s.num_packed == 1


def test_stream_stops_at_first_unplaceable_item():
    s = reset([(10, 10, 6), (10, 10, 6), (1, 1, 1)], CFG)
    s = step(s, 0)
    assert s.terminal
    assert s.uti == pytest.approx(0.6)
    assert s.t == 1


def test_oversized_first_item_terminal_at_reset():
    s = reset([(11, 1, 1)], CFG)
    assert s.terminal
    assert final_reward(s) == 0.0


def test_step_does_not_mutate_input():
    s0 = reset([(5, 5, 5)] * 3, CFG)
    heights = s0.heightmap.heights.copy()
    spaces = s0.spaces.copy()
    s1 = step(s0, 1)
    assert np.array_equal(s0.heightmap.heights, heights)
    assert np.array_equal(s0.spaces, spaces)
    assert s0.t == 0 and s1.t == 1


def test_illegal_actions_rejected():
    s = reset([(5, 5, 5)] * 2, CFG)
    with pytest.raises(IndexError):
        step(s, len(s.candidates))
    other = reset([(4, 4, 4)], CFG)
    with pytest.raises(ValueError):
        step(s, other.candidates[0])
    done = step(reset([(10, 10, 10)], CFG), 0)
    with pytest.raises(ValueError):
        step(done, 0)
    with pytest.raises(ValueError):
        final_reward(s)


def test_step_accepts_action_objects():
    s = reset([(5, 5, 5)] * 2, CFG)
    a = s.candidates[2]
    assert np.array_equal(step(s, a).packed, step(s, 2).packed)


@pytest.mark.parametrize("dense", [False, True])
def test_rewards_sum_to_utilisation(dense):
    cfg = EnvConfig(container=(10, 10, 10), dense_reward=dense)
    rng = np.random.default_rng(0)
    items = rng.choice([2, 4], size=(40, 3)).astype(float)
    s = reset(items, cfg)
    total = 0.0
    while not s.terminal:
        nxt = step(s, int(rng.integers(len(s.candidates))))
        total += step_reward(s, nxt)
        s = nxt
    assert total == pytest.approx(s.uti)


def test_with_future_replaces_rest_of_stream():
    s = reset([(2, 2, 2), (3, 3, 3), (4, 4, 4)], CFG)
    f = s.with_future(np.array([[1, 1, 1]]))
    assert f.items.tolist() == [[2, 2, 2], [1, 1, 1]]
    assert s.items.shape == (3, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["discrete", "continuous"]), st.booleans())
def test_random_episodes_are_valid_packings(seed, mode, rotate):
    rng = np.random.default_rng(seed)
    items = rng.choice([1, 2, 3, 4, 5], size=(30, 3)).astype(float)
    if mode == "continuous":
        items = items + rng.uniform(-0.5, 0.5, size=items.shape)
    cfg = EnvConfig(container=(8, 8, 8), mode=mode, allow_rotation=rotate,
                    heuristics=("ems", "extreme", "heightmap"), debug_checks=True)
    r = run_episode(items, cfg, random_chooser(rng))
    assert verify_packing(r.packed, cfg.container) == []
    assert 0.0 <= r.uti <= 1.0
    assert r.uti == pytest.approx(np.prod(r.packed[:, 3:] - r.packed[:, :3], axis=1).sum() / 512)


def test_greedy_episode_and_trace(tmp_path):
    items = [(5, 5, 5)] * 9
    r = run_episode(items, CFG, greedy_chooser)
    assert r.num_packed == 8
    assert r.uti == 1.0
    lines = r.to_jsonl().splitlines()
    head = json.loads(lines[0])
    assert head["schema"] == "packsel.trace/1"
    assert len(lines) == 1 + 8
    assert json.loads(lines[-1])["reward"] == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(mode="fuzzy")
    with pytest.raises(ValueError):
        EnvConfig(container=(1, 0, 1))
    assert EnvConfig().cap == 50
    assert EnvConfig(mode="continuous").cap == 100
