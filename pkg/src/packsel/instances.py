"""Item sets, random item distributions, and dataset generation/serialisation.

A distribution is categorical over the full cross product of an item set's
per-axis values and is drawn from a flat Dirichlet.  Every random draw is
keyed by ``(master seed, subset, distribution index, instance index)`` so
serial and parallel builds agree bit for bit.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

SCHEMA = "packsel.dataset/1"
MODES = ("discrete", "continuous")

ITEM_SETS = {
    "Default": (2, 4, 6, 8, 10),
    "ID-Large": (6, 8, 10),
    "ID-Medium": (4, 6, 8),
    "ID-Small": (2, 4, 6),
    "OOD": tuple(range(1, 12)),
    "OOD-Large": tuple(range(6, 12)),
    "OOD-Small": tuple(range(1, 7)),
}
SUBSETS = tuple(ITEM_SETS)
NOISE = 0.5


@dataclass(frozen=True)
class ItemSet:
    name: str
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise ValueError("item set must have at least one value")
        if any(v <= 0 for v in self.values):
            raise ValueError("item set values must be positive")
        object.__setattr__(self, "values", tuple(sorted(self.values)))

    @classmethod
    def named(cls, name: str) -> "ItemSet":
        try:
            return cls(name, ITEM_SETS[name])
        except KeyError:
            raise ValueError(f"unknown item set {name!r}; choose from {', '.join(SUBSETS)}") from None

    @property
    def types(self) -> np.ndarray:
        """All ``len(values)**3`` item types, ``itertools.product`` order."""
        return np.array(list(itertools.product(self.values, repeat=3)), dtype=float)


@dataclass(frozen=True)
class DistributionSpec:
    item_set: ItemSet
    probs: np.ndarray = field(compare=False)
    seed: int = 0
    index: int = 0

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) != len(self.item_set.values) ** 3:
            raise ValueError("probability vector does not match the item-type count")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be non-negative and sum to 1")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.probs))

    def sample_items(self, rng: np.random.Generator, n: int, mode: str = "discrete") -> np.ndarray:
        types = self.item_set.types
        items = types[rng.choice(len(types), size=n, p=self.probs)]
        if mode == "continuous":
            items = items + rng.uniform(-NOISE, NOISE, size=items.shape)
        return items


@dataclass(frozen=True)
class Instance:
    items: np.ndarray = field(compare=False)
    dist_index: int = 0
    index: int = 0

    def __post_init__(self):
        a = np.array(self.items, dtype=float).reshape(-1, 3)
        if len(a) == 0:
            raise ValueError("instance must contain at least one item")
        if np.any(a <= 0):
            raise ValueError("item dimensions must be positive")
        a.flags.writeable = False
        object.__setattr__(self, "items", a)

    def __len__(self):
        return len(self.items)

    def __eq__(self, other):
        return (
            isinstance(other, Instance)
            and (self.dist_index, self.index) == (other.dist_index, other.index)
            and np.array_equal(self.items, other.items)
        )

    __hash__ = None


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng([int(k) for k in key])


def _subset_key(name: str) -> int:
    return zlib.crc32(name.encode())


def normalize_probs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    p = p / p.sum()
    # push the rounding residue onto the largest entry so the sum is exact to 1e-12
    p[np.argmax(p)] += 1.0 - p.sum()
    return p


def sample_distribution(item_set: ItemSet, seed: int, index: int = 0, axis_independent: bool = False) -> DistributionSpec:
    """Draw a categorical over the item types from a flat Dirichlet."""
    rng = _rng(seed, _subset_key(item_set.name), index)
    n = len(item_set.values)
    if axis_independent:
        per_axis = [rng.dirichlet(np.ones(n)) for _ in range(3)]
        probs = np.einsum("i,j,k->ijk", *per_axis).ravel()
    else:
        probs = rng.dirichlet(np.ones(n**3)) if n > 1 else np.ones(1)
    return DistributionSpec(item_set, normalize_probs(probs), seed, index)


def sample_instance(spec: DistributionSpec, length: int, mode: str = "discrete", seed: int = 0, index: int = 0) -> Instance:
    if length < 1:
        raise ValueError("instance length must be at least 1")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    rng = _rng(seed, _subset_key(spec.item_set.name), spec.index, index, MODES.index(mode))
    return Instance(spec.sample_items(rng, length, mode), spec.index, index)


def point_distribution(item: Sequence[float], name: str = "point") -> DistributionSpec:
    """Distribution that always yields ``item`` (its axes may differ)."""
    values = tuple(sorted(set(item)))
    iset = ItemSet(name, values)
    probs = np.zeros(len(values) ** 3)
    probs[iset.types.tolist().index([float(v) for v in item])] = 1.0
    return DistributionSpec(iset, probs)


@dataclass
class Dataset:
    subset: str
    mode: str
    seed: int
    item_set: ItemSet
    distributions: list
    instances: list  # per distribution, list of Instance
    episode_len: int = 70

    def __iter__(self) -> Iterator[Instance]:
        for group in self.instances:
            yield from group

    def __len__(self):
        return sum(len(g) for g in self.instances)

    @property
    def n_dists(self):
        return len(self.distributions)

    def header(self) -> dict:
        return {
            "schema": SCHEMA,
            "subset": self.subset,
            "mode": self.mode,
            "seed": self.seed,
            "item_set": {"name": self.item_set.name, "values": list(self.item_set.values)},
            "n_dists": len(self.distributions),
            "n_instances": len(self.instances[0]) if self.instances else 0,
            "episode_len": self.episode_len,
            "distributions": [d.probs.tolist() for d in self.distributions],
        }

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), separators=(",", ":"))]
        for group in self.instances:
            for inst in group:
                rec = {"dist": inst.dist_index, "inst": inst.index, "items": inst.items.tolist()}
                lines.append(json.dumps(rec, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def save(self, path) -> str:
        """Write the dataset; returns the sha256 of the file contents."""
        text = self.to_jsonl()
        Path(path).write_text(text)
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_jsonl(cls, text: str) -> "Dataset":
        lines = text.splitlines()
        head = json.loads(lines[0])
        if head.get("schema") != SCHEMA:
            raise ValueError(f"unsupported dataset schema {head.get('schema')!r}")
        iset = ItemSet(head["item_set"]["name"], tuple(head["item_set"]["values"]))
        dists = [DistributionSpec(iset, np.array(p), head["seed"], i) for i, p in enumerate(head["distributions"])]
        groups = [[] for _ in dists]
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            groups[rec["dist"]].append(Instance(np.array(rec["items"], dtype=float), rec["dist"], rec["inst"]))
        return cls(head["subset"], head["mode"], head["seed"], iset, dists, groups, head["episode_len"])

    @classmethod
    def load(cls, path) -> "Dataset":
        return cls.from_jsonl(Path(path).read_text())


def dataset_filename(subset: str, mode: str) -> str:
    return f"{subset}_{mode}.jsonl"


def build_dataset(
    subset: str,
    mode: str = "discrete",
    seed: int = 0,
    n_dists: int = 100,
    n_instances: int = 64,
    episode_len: int = 70,
    item_set: ItemSet | None = None,
    axis_independent: bool = False,
) -> Dataset:
    """Sample ``n_dists`` distributions from the subset's item set and ``n_instances`` sequences from each."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    iset = item_set if item_set is not None else ItemSet.named(subset)
    dists = [sample_distribution(iset, seed, d, axis_independent) for d in range(n_dists)]
    groups = [[sample_instance(spec, episode_len, mode, seed, i) for i in range(n_instances)] for spec in dists]
    return Dataset(subset, mode, seed, iset, dists, groups, episode_len)
