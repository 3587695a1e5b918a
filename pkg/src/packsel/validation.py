"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .instances import Dataset, DistributionSpec, Instance, ItemSet, MODES
from .spatial import HEURISTICS


def check_container(container) -> tuple:
    c = tuple(float(v) for v in np.ravel(container))
    if len(c) == 1:
        c = c * 3
    if len(c) != 3 or not all(np.isfinite(c)) or min(c) <= 0:
        raise ValueError(f"container must be three positive finite lengths, got {container!r}")
    return c


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


def check_k(k):
    if k is None:
        return None
    if isinstance(k, bool) or not isinstance(k, (int, np.integer)) or k < 1:
        raise ValueError(f"k must be a positive integer or None, got {k!r}")
    return int(k)


def check_heuristics(heuristics) -> tuple:
    h = (heuristics,) if isinstance(heuristics, str) else tuple(heuristics)
    bad = [x for x in h if x not in HEURISTICS]
    if not h or bad:
        raise ValueError(f"unknown heuristics {bad}; choose from {HEURISTICS}")
    return h


def check_items(items) -> np.ndarray:
    """An item stream as a float ``(n, 3)`` array of positive finite sizes."""
    a = np.asarray(getattr(items, "items", items), dtype=float)
    if a.ndim == 1 and a.size == 3:
        a = a[None]
    if a.ndim != 2 or a.shape[1] != 3 or len(a) == 0:
        raise ValueError(f"items must have shape (n, 3) with n >= 1, got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise ValueError("item sizes must be positive and finite")
    return a


def check_instances(X) -> list:
    """A batch of item streams: a Dataset, Instances, arrays or a single ``(n, 3)`` array."""
    if isinstance(X, Dataset):
        X = list(X)
    elif isinstance(X, (Instance, np.ndarray)) and np.asarray(getattr(X, "items", X)).ndim == 2:
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("need at least one instance")
    return [check_items(x) for x in X]


def check_tasks(X, seed: int = 0, n: int = 16) -> list:
    """Item distributions from a Dataset, a list of DistributionSpec, an ItemSet or a value tuple."""
    from .instances import sample_distribution

    if isinstance(X, Dataset):
        return list(X.distributions)
    if isinstance(X, DistributionSpec):
        return [X]
    if isinstance(X, ItemSet):
        return [sample_distribution(X, seed, i) for i in range(n)]
    X = list(X)
    if not X:
        raise ValueError("need at least one distribution")
    if all(isinstance(x, DistributionSpec) for x in X):
        return X
    vals = np.asarray(X, dtype=float)
    if vals.ndim != 1 or np.any(vals <= 0):
        raise ValueError("expected distributions, an item set, or a list of positive item sizes")
    return check_tasks(ItemSet("custom", tuple(vals.tolist())), seed, n)
