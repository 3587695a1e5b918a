"""Reference decision makers: UCT search over sampled futures, exhaustive
search on tiny instances, and the analyses that compare a proposal policy
against them.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .env import PackingState, reset, run_episode, step
from .policy import PolicyParams, featurize_all, score_and_softmax

FutureSampler = Callable[[np.random.Generator, int], np.ndarray]


def lowest_top_chooser(state: PackingState):
    """Heuristic rollout policy: place so the new top is as low as possible, earliest candidate on ties."""
    c = state.candidates
    tops = c.positions[:, 2] + c.dims[:, 2]
    return int(np.argmin(tops)), None


@dataclass(frozen=True)
class MctsConfig:
    simulations: int = 2000
    c: float = math.sqrt(2.0)
    n_futures: int = 64
    rollout: Callable = field(default=lowest_top_chooser, compare=False)
    seed: int = 0
    pre_evaluate: bool = True

    def __post_init__(self):
        if self.simulations < 1:
            raise ValueError("simulations must be at least 1")
        if self.c < 0:
            raise ValueError("exploration constant must be non-negative")
        if self.n_futures < 1:
            raise ValueError("n_futures must be at least 1")


@dataclass
class FrequencyTable:
    """How often each candidate was the best root action over the sampled futures."""

    counts: np.ndarray  # fractional when ties are split
    n_samples: int

    @property
    def probs(self) -> np.ndarray:
        return self.counts / max(self.n_samples, 1)

    def merge(self, other: "FrequencyTable") -> "FrequencyTable":
        return FrequencyTable(self.counts + other.counts, self.n_samples + other.n_samples)


def distribution_sampler(spec, mode: str = "discrete") -> FutureSampler:
    return lambda rng, n: spec.sample_items(rng, n, mode)


def fixed_sampler(future) -> FutureSampler:
    """Always returns the given future (truncated or padded by repetition of nothing)."""
    future = np.asarray(future, dtype=float).reshape(-1, 3)
    return lambda rng, n: future[:n]


def rollout(state: PackingState, chooser) -> float:
    while not state.terminal:
        idx, _ = chooser(state)
        state = step(state, idx)
    return state.uti


class _Node:
    __slots__ = ("state", "actions", "untried", "N", "n", "w", "children")

    def __init__(self, state: PackingState, actions=None):
        self.state = state
        if state.terminal:
            acts = np.empty(0, dtype=int)
        else:
            acts = np.arange(len(state.candidates)) if actions is None else np.asarray(actions, dtype=int)
        self.actions = acts
        self.untried = list(range(len(acts)))[::-1]  # pop() yields candidate order
        self.N = 0
        self.n = np.zeros(len(acts))
        self.w = np.zeros(len(acts))
        self.children = [dict() for _ in acts]

    def ucb(self, c: float) -> int:
        mean = self.w / self.n
        bonus = c * np.sqrt(math.log(self.N) / self.n)
        return int(np.argmax(mean + bonus))


def _key(items, t):
    return None if t >= len(items) else tuple(items[t].tolist())


def mcts_decide(state: PackingState, sampler: FutureSampler, cfg: MctsConfig = MctsConfig(), restrict=None):
    """UCT search at ``state``; returns ``(best candidate index, FrequencyTable)``.

    Each simulation replays one of ``cfg.n_futures`` sampled continuations of
    the item stream.  Below an action the tree branches on the next item, so
    the states held in nodes are exact.  The frequency table records, for
    every sampled future, which root action reached the best return seen
    for that future (ties split evenly).  With ``restrict`` (a proposal set)
    only its candidates are expanded at the root.
    """
    if state.terminal:
        raise ValueError("cannot search from a terminal state")
    rng = np.random.default_rng(cfg.seed)
    horizon = len(state.items) - state.t - 1
    futures = [np.asarray(sampler(rng, horizon), dtype=float).reshape(-1, 3) for _ in range(cfg.n_futures)]
    roots = [state.with_future(f) for f in futures]
    acts = None if restrict is None else np.asarray(getattr(restrict, "indices", restrict), dtype=int)
    root = _Node(state, acts)
    A = len(root.actions)
    best = np.full((A, cfg.n_futures), -np.inf)

    if cfg.pre_evaluate:
        for fi, rs in enumerate(roots):
            for ai, a in enumerate(root.actions):
                best[ai, fi] = rollout(step(rs, a), cfg.rollout)

    for sim in range(cfg.simulations):
        fi = sim % cfg.n_futures
        items = roots[fi].items
        node, path = root, []
        local = roots[fi]
        while True:
            if node.state.terminal:
                value = node.state.uti
                break
            if node.untried:
                ai = node.untried.pop()
                nxt = step(local, node.actions[ai])
                child = _Node(nxt)
                node.children[ai][_key(items, nxt.t)] = child
                path.append((node, ai))
                value = rollout(nxt, cfg.rollout)
                break
            ai = node.ucb(cfg.c)
            path.append((node, ai))
            key = _key(items, node.state.t + 1)
            child = node.children[ai].get(key)
            if child is None:
                nxt = step(local, node.actions[ai])
                child = _Node(nxt)
                node.children[ai][key] = child
                value = rollout(nxt, cfg.rollout)
                break
            node = child
            local = _with_items(child.state, items)
        for nd, ai in path:
            nd.N += 1
            nd.n[ai] += 1
            nd.w[ai] += value
        if path:
            a0 = path[0][1]
            if value > best[a0, fi]:
                best[a0, fi] = value

    counts = np.zeros(len(state.candidates))
    n_valid = 0
    for fi in range(cfg.n_futures):
        col = best[:, fi]
        if not np.isfinite(col.max()):
            continue
        winners = np.flatnonzero(col >= col.max() - 1e-12)
        counts[root.actions[winners]] += 1.0 / len(winners)
        n_valid += 1
    table = FrequencyTable(counts, n_valid)
    # most frequent winner; ties go to the earliest candidate, as in exhaustive_best
    sub = counts[root.actions]
    return int(root.actions[int(np.argmax(sub >= sub.max() - 1e-12))]), table


def _with_items(state: PackingState, items) -> PackingState:
    if state.items is items:
        return state
    s = state.copy()
    s.items = items
    return s


def exhaustive_best(state: PackingState, future=None, depth_cap: int | None = None, guard: float = 1e6):
    """Exact best candidate and return by enumerating every action sequence.

    ``future`` overrides the items after the current one.  With
    ``depth_cap`` the return is the utilisation after that many placements.
    Ties go to the earliest candidate, i.e. lowest ``(z, y, x)``, at every
    depth.
    """
    if state.terminal:
        raise ValueError("cannot search from a terminal state")
    if future is not None:
        state = state.with_future(future)
    depth = len(state.items) - state.t
    if depth_cap is not None:
        depth = min(depth, depth_cap)
    branching = len(state.candidates)
    if float(branching) ** depth > guard:
        raise ValueError(f"search space {branching}^{depth} exceeds guard {guard:g}")

    def value(s, d):
        if s.terminal or d == 0:
            return s.uti
        return max(value(step(s, a), d - 1) for a in range(len(s.candidates)))

    best_a, best_v = 0, -np.inf
    for a in range(branching):
        v = value(step(state, a), depth - 1)
        if v > best_v + 1e-12:
            best_a, best_v = a, v
    return best_a, float(best_v)


# -- analyses ------------------------------------------------------------------


@dataclass
class Decision:
    state: PackingState
    sampler: FutureSampler


def collect_decisions(pair, instances: Sequence, config, samplers: Sequence[FutureSampler], every: int = 1) -> list[Decision]:
    """Decision points visited by the pair's greedy policy, every ``every``-th step."""
    out = []
    chooser = pair.chooser("argmax")
    for inst, smp in zip(instances, samplers):
        s = reset(inst, config)
        while not s.terminal:
            if s.t % every == 0:
                out.append(Decision(s, smp))
            idx, _ = chooser(s)
            s = step(s, idx)
    return out


def proposal_ranking(params_p: PolicyParams, state: PackingState) -> tuple[np.ndarray, np.ndarray]:
    """Candidates ordered by proposal probability (ties to the earlier one) and those probabilities."""
    probs = score_and_softmax(params_p, featurize_all(state))
    order = np.argsort(-probs, kind="stable")
    return order, probs


def inclusion_rate(params_p: PolicyParams, decisions: Sequence[Decision], ks: Sequence, cfg: MctsConfig = MctsConfig()) -> dict:
    """Fraction of decisions whose oracle-best action is in the top-k proposal, per ``k``.

    ``k=None`` means the full candidate set.
    """
    hits = {k: 0 for k in ks}
    for d in decisions:
        best, _ = mcts_decide(d.state, d.sampler, cfg)
        order, _ = proposal_ranking(params_p, d.state)
        rank = int(np.flatnonzero(order == best)[0])
        for k in ks:
            if k is None or rank < k:
                hits[k] += 1
    n = max(len(decisions), 1)
    return {k: hits[k] / n for k in ks}


def policy_induced_vs_optimal(params: PolicyParams, decisions: Sequence[Decision], cfg: MctsConfig = MctsConfig(), tables=None):
    """Mean policy probability and mean optimal frequency at each policy rank.

    Returns ``(policy_curve, optimal_curve)``; shorter candidate sets are
    padded with zeros so both curves sum to one.
    """
    rows_p, rows_o = [], []
    for i, d in enumerate(decisions):
        table = tables[i] if tables is not None else mcts_decide(d.state, d.sampler, cfg)[1]
        order, probs = proposal_ranking(params, d.state)
        rows_p.append(probs[order])
        rows_o.append(table.probs[order])
    return _pad_mean(rows_p), _pad_mean(rows_o)


def _pad_mean(rows):
    if not rows:
        return np.zeros(0)
    m = max(len(r) for r in rows)
    a = np.zeros((len(rows), m))
    for i, r in enumerate(rows):
        a[i, : len(r)] = r
    return a.mean(axis=0)


def mcts_episode(instance, config, sampler: FutureSampler, cfg: MctsConfig, proposal: PolicyParams | None = None, k: int = 3):
    """Play a whole episode choosing every action by search, optionally restricted to the top-k proposal."""
    from .policy import propose

    step_i = [0]

    def choose(state):
        restrict = None
        if proposal is not None:
            restrict = propose(proposal, featurize_all(state), k)
        c = MctsConfig(cfg.simulations, cfg.c, cfg.n_futures, cfg.rollout, cfg.seed * 1000 + step_i[0], cfg.pre_evaluate)
        step_i[0] += 1
        return mcts_decide(state, sampler, c, restrict)[0], None

    return run_episode(instance, config, choose, keep_trajectory=False)


def write_rank_curves_csv(path, policy_curve, optimal_curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "policy_prob", "optimal_freq"])
        for r, (p, o) in enumerate(zip(policy_curve, optimal_curve), start=1):
            w.writerow([r, f"{p:.6f}", f"{o:.6f}"])


def write_inclusion_csv(path, rates: dict, slice_name: str = "all"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slice", "k", "rate"])
        for k, v in rates.items():
            w.writerow([slice_name, "all" if k is None else k, f"{v:.6f}"])
