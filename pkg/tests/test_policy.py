import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from packsel.env import EnvConfig, reset, step
from packsel.policy import (
    FEATURES,
    Architecture,
    PolicyPair,
    PolicyParams,
    featurize_all,
    init_params,
    log_prob,
    log_prob_grad,
    propose,
    score_and_softmax,
    select,
    top_k,
)

CFG = EnvConfig(container=(10, 10, 10))


def random_params(layers, rng):
    arch = Architecture(layers=layers, hidden=8)
    return PolicyParams(arch, rng.normal(0, 1, arch.size))


def finite_difference(params, feats, chosen, h=1e-6):
    g = np.zeros(params.arch.size)
    for i in range(params.arch.size):
        up = params.theta.copy()
        dn = params.theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (log_prob(params.replace(up), feats, chosen) - log_prob(params.replace(dn), feats, chosen)) / (2 * h)
    return g


@pytest.mark.parametrize("layers", [0, 1])
def test_gradient_matches_finite_differences(layers):
    rng = np.random.default_rng(layers)
    for _ in range(10):
        p = random_params(layers, rng)
        feats = rng.normal(0, 1, (int(rng.integers(2, 8)), p.arch.n_features))
        c = int(rng.integers(len(feats)))
        a, n = log_prob_grad(p, feats, c), finite_difference(p, feats, c)
        assert np.linalg.norm(a - n) <= 1e-5 * max(np.linalg.norm(n), 1e-8)


def test_single_candidate_gradient_is_zero():
    p = random_params(1, np.random.default_rng(0))
    assert not log_prob_grad(p, np.ones((1, p.arch.n_features)), 0).any()


def test_uniform_initial_policy():
    p = init_params(Architecture(), 0)
    probs = score_and_softmax(p, np.random.default_rng(1).normal(size=(7, len(FEATURES))))
    assert np.allclose(probs, 1 / 7)


@settings(max_examples=30)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=12), st.integers(1, 15))
def test_top_k_properties(scores, k):
    probs = np.exp(scores) / np.exp(scores).sum()
    idx = top_k(probs, k)
    assert len(idx) == min(k, len(probs))
    assert len(set(idx.tolist())) == len(idx)
    rest = np.setdiff1d(np.arange(len(probs)), idx)
    if len(rest):
        assert probs[idx].min() >= probs[rest].max()


def test_top_k_ties_prefer_earlier():
    assert top_k(np.array([0.25, 0.25, 0.25, 0.25]), 2).tolist() == [0, 1]


def test_selection_stays_in_proposal():
    rng = np.random.default_rng(0)
    pp, ps = random_params(1, rng), random_params(1, rng)
    feats = rng.normal(size=(10, pp.arch.n_features))
    prop = propose(pp, feats, 3)
    for _ in range(50):
        rec = select(ps, feats, prop, "sample", rng)
        assert rec.chosen in prop.indices
        assert rec.proposal_logp == pytest.approx(np.log(prop.proposal_probs[rec.chosen]))
    assert np.isclose(prop.selection_probs.sum(), 1.0)


def test_k_one_selection_is_forced():
    rng = np.random.default_rng(1)
    pp, ps = random_params(1, rng), random_params(1, rng)
    feats = rng.normal(size=(6, pp.arch.n_features))
    prop = propose(pp, feats, 1)
    rec = select(ps, feats, prop, "sample", rng)
    assert rec.chosen == int(np.argmax(prop.proposal_probs))
    assert rec.selection_logp == 0.0


def test_features_shape_and_scale():
    s = reset([(5, 5, 5)] * 4, CFG)
    s = step(s, 0)
    f = featurize_all(s)
    assert f.shape == (len(s.candidates), len(FEATURES))
    assert np.all(np.isfinite(f))
    col = dict(zip(FEATURES, f.T))
    assert np.all(col["fill_after"] == pytest.approx(0.25))
    assert np.all((col["support"] >= 0) & (col["support"] <= 1))
    on_top = s.candidates.positions[:, 2] == 5
    assert np.all(col["max_height_after"][on_top] == 1.0)


def test_ems_features_match_real_update():
    from packsel.spatial import ems_update

    rng = np.random.default_rng(4)
    s = reset(rng.choice([2, 3, 4], size=(10, 3)).astype(float), CFG)
    for _ in range(4):
        s = step(s, int(rng.integers(len(s.candidates))))
    f = featurize_all(s)
    i = FEATURES.index("ems_count_after")
    for j, b in enumerate(s.candidates.bounds):
        after = ems_update(s.spaces, b)
        assert round(f[j, i] * 100) == len(after)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pair = PolicyPair(random_params(1, rng), random_params(0, rng), k=5)
    pair.save(tmp_path / "c.json", {"note": "x"})
    back = PolicyPair.load(tmp_path / "c.json")
    assert back.k == 5
    assert back.proposal.digest() == pair.proposal.digest()
    assert back.selection.digest() == pair.selection.digest()
    d = json.loads((tmp_path / "c.json").read_text())
    d["proposal"]["theta"][0] += 1
    (tmp_path / "c.json").write_text(json.dumps(d))
    with pytest.raises(ValueError):
        PolicyPair.load(tmp_path / "c.json")


def test_params_are_immutable_and_validated():
    p = init_params(Architecture(), 0)
    with pytest.raises(ValueError):
        p.theta[0] = 1.0
    with pytest.raises(ValueError):
        PolicyParams(Architecture(), np.zeros(3))
    with pytest.raises(ValueError):
        Architecture(layers=2)


def test_pair_chooser_deterministic_argmax():
    rng = np.random.default_rng(2)
    pair = PolicyPair(random_params(1, rng), random_params(1, rng), k=3)
    s = reset(np.random.default_rng(0).choice([2, 4], size=(12, 3)).astype(float), CFG)
    a = pair.chooser("argmax")(s)[0]
    b = pair.chooser("argmax")(s)[0]
    assert a == b
    coupled = PolicyPair(pair.proposal, pair.selection, k=None)
    rec = coupled.chooser("sample", 0)(s)[1]
    assert len(rec.proposal) == len(s.candidates)
