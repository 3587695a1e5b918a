"""The online packing MDP.

States are treated as values: :func:`step` returns a fresh state and leaves
its input untouched, which is what tree search needs.  Feasibility belongs to
the environment; a policy only ever picks an index into
``state.candidates``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .geometry import Dim3, verify_packing
from .spatial import CandidateAction, CandidateSet, Heightmap, ems_update, generate_candidates, initial_spaces

TRACE_SCHEMA = "packsel.trace/1"


@dataclass(frozen=True)
class EnvConfig:
    container: tuple = (20, 20, 20)
    mode: str = "discrete"
    heuristics: tuple = ("ems",)
    max_candidates: int | None = None
    allow_rotation: bool = False
    require_support: float = 0.0
    dense_reward: bool = False
    debug_checks: bool = False

    def __post_init__(self):
        object.__setattr__(self, "container", tuple(float(v) for v in self.container))
        object.__setattr__(self, "heuristics", tuple(self.heuristics))
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if len(self.container) != 3 or min(self.container) <= 0:
            raise ValueError("container needs three positive dimensions")

    @property
    def cap(self) -> int:
        if self.max_candidates is not None:
            return int(self.max_candidates)
        return 50 if self.mode == "discrete" else 100

    @property
    def volume(self) -> float:
        L, W, H = self.container
        return L * W * H

    def to_dict(self) -> dict:
        return asdict(self)


class PackingState:
    """Container contents, spatial indices and the item stream cursor."""

    __slots__ = ("config", "items", "t", "packed", "spaces", "heightmap", "candidates", "packed_volume")

    def __init__(self, config, items, t, packed, spaces, heightmap, candidates, packed_volume):
        self.config = config
        self.items = items
        self.t = t
        self.packed = packed
        self.spaces = spaces
        self.heightmap = heightmap
        self.candidates = candidates
        self.packed_volume = packed_volume

    @property
    def terminal(self) -> bool:
        return self.candidates is None or len(self.candidates) == 0

    @property
    def current_item(self) -> Dim3 | None:
        if self.t >= len(self.items):
            return None
        return Dim3(*(float(v) for v in self.items[self.t]))

    @property
    def uti(self) -> float:
        return self.packed_volume / self.config.volume

    @property
    def num_packed(self) -> int:
        return len(self.packed)

    def copy(self) -> "PackingState":
        return PackingState(
            self.config, self.items, self.t, self.packed, self.spaces,
            self.heightmap.copy(), self.candidates, self.packed_volume,
        )

    def with_future(self, future: np.ndarray) -> "PackingState":
        """Same state with every item after the current one replaced by ``future``."""
        future = np.asarray(future, dtype=float).reshape(-1, 3)
        items = np.concatenate([self.items[: self.t + 1], future])
        s = self.copy()
        s.items = items
        return s

    def summary(self) -> dict:
        item = self.current_item
        return {
            "t": self.t,
            "uti": self.uti,
            "num_packed": self.num_packed,
            "n_spaces": int(len(self.spaces)),
            "item": None if item is None else list(item.as_tuple()),
        }


def _candidates_for(config: EnvConfig, items, t, packed, spaces, hm) -> CandidateSet | None:
    if t >= len(items):
        return None
    item = Dim3(*(float(v) for v in items[t]))
    return generate_candidates(
        spaces, packed, hm, config.container, item,
        heuristics=config.heuristics, cap=config.cap,
        allow_rotation=config.allow_rotation, require_support=config.require_support,
    )


def reset(instance, config: EnvConfig = EnvConfig()) -> PackingState:
    items = getattr(instance, "items", instance)
    items = np.asarray(items, dtype=float).reshape(-1, 3)
    if len(items) == 0:
        raise ValueError("instance must contain at least one item")
    packed = np.empty((0, 6))
    spaces = initial_spaces(config.container)
    hm = Heightmap.for_mode(config.container, config.mode)
    cands = _candidates_for(config, items, 0, packed, spaces, hm)
    return PackingState(config, items, 0, packed, spaces, hm, cands, 0.0)


def step(state: PackingState, action) -> PackingState:
    """Commit the current item at ``action`` (a candidate or its index) and advance.

    The returned state is terminal when the stream is exhausted or the next
    item has no feasible placement.
    """
    if state.terminal:
        raise ValueError("cannot step a terminal state")
    cands = state.candidates
    if isinstance(action, CandidateAction):
        idx = cands.index(action)
    else:
        idx = int(action)
        if not 0 <= idx < len(cands):
            raise IndexError(f"action index {idx} outside candidate set of size {len(cands)}")
    box = cands.bounds[idx]
    config = state.config
    spaces = ems_update(state.spaces, box)
    packed = np.vstack([state.packed, box[None]])
    hm = state.heightmap.copy()
    hm.add_box(box)
    if config.debug_checks:
        _check_spaces(spaces, packed)
    vol = float(np.prod(box[3:] - box[:3]))
    t = state.t + 1
    nxt = _candidates_for(config, state.items, t, packed, spaces, hm)
    return PackingState(config, state.items, t, packed, spaces, hm, nxt, state.packed_volume + vol)


def _check_spaces(spaces, packed):
    from .geometry import overlaps_any

    bad = overlaps_any(packed, spaces)
    if bad.any():
        raise AssertionError(f"{int(bad.sum())} empty spaces intersect packed boxes")


def step_reward(prev: PackingState, nxt: PackingState) -> float:
    """Per-step reward; summed over an episode it always equals the final utilisation."""
    if prev.config.dense_reward:
        return nxt.uti - prev.uti
    return nxt.uti if nxt.terminal else 0.0


def final_reward(state: PackingState) -> float:
    if not state.terminal:
        raise ValueError("final reward requested for a non-terminal state")
    return state.uti


@dataclass
class StepRecord:
    summary: dict
    candidates: CandidateSet
    chosen: int
    info: object = None
    reward: float = 0.0


@dataclass
class EpisodeResult:
    uti: float
    num_packed: int
    packed: np.ndarray = field(repr=False)
    container: tuple = (20.0, 20.0, 20.0)
    trajectory: list = field(default_factory=list, repr=False)

    def violations(self) -> list[str]:
        return verify_packing(self.packed, self.container)

    def trace_records(self) -> list[dict]:
        recs = [{"schema": TRACE_SCHEMA, "container": list(self.container), "uti": self.uti, "num_packed": self.num_packed}]
        for s in self.trajectory:
            rec = {
                "state": s.summary,
                "candidates": s.candidates.positions.tolist(),
                "chosen": s.chosen,
                "reward": s.reward,
            }
            info = s.info
            if info is not None and hasattr(info, "to_dict"):
                rec["logp"] = info.to_dict()
            recs.append(rec)
        return recs

    def to_jsonl(self) -> str:
        return "\n".join(json.dumps(r) for r in self.trace_records()) + "\n"


Chooser = Callable[[PackingState], tuple]


def run_episode(instance, config: EnvConfig, chooser: Chooser, keep_trajectory: bool = True) -> EpisodeResult:
    """Play one episode; ``chooser(state)`` returns ``(candidate index, info)``."""
    state = reset(instance, config)
    traj = []
    while not state.terminal:
        idx, info = chooser(state)
        nxt = step(state, idx)
        if keep_trajectory:
            traj.append(StepRecord(state.summary(), state.candidates, int(idx), info, step_reward(state, nxt)))
        state = nxt
    return EpisodeResult(final_reward(state), state.num_packed, state.packed, config.container, traj)


def random_chooser(rng: np.random.Generator) -> Chooser:
    def choose(state):
        return int(rng.integers(len(state.candidates))), None

    return choose


def greedy_chooser(state) -> tuple:
    """Lowest ``(z, y, x)`` placement, i.e. the first candidate."""
    return 0, None
