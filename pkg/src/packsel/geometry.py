"""Axis-aligned cuboid arithmetic.

Boxes are described by their minimum corner and their extents.  Two boxes
overlap only when their open interiors intersect, so touching faces, edges
or corners are legal.  Every ``<=`` comparison carries an absolute tolerance
``EPS``; for integer inputs this is equivalent to exact comparison.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

EPS = 1e-9


@dataclass(frozen=True)
class Dim3:
    l: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise ValueError(f"dimensions must be positive, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.l, self.w, self.h)

    @property
    def volume(self):
        return self.l * self.w * self.h

    def rotated(self):
        """Swap the two horizontal axes."""
        return Dim3(self.w, self.l, self.h)


@dataclass(frozen=True)
class Placement:
    x: float
    y: float
    z: float

    def __post_init__(self):
        if min(self.x, self.y, self.z) < -EPS:
            raise ValueError(f"placement must be non-negative, got {self.as_tuple()}")

    def as_tuple(self):
        return (self.x, self.y, self.z)


@dataclass(frozen=True)
class PlacedBox:
    dim: Dim3
    pos: Placement

    @property
    def lo(self):
        return self.pos.as_tuple()

    @property
    def hi(self):
        p, d = self.pos, self.dim
        return (p.x + d.l, p.y + d.w, p.z + d.h)

    @property
    def bounds(self):
        """``(x0, y0, z0, x1, y1, z1)``."""
        return self.lo + self.hi

    @property
    def volume(self):
        return self.dim.volume

    @classmethod
    def from_bounds(cls, b: Sequence[float]) -> "PlacedBox":
        return cls(Dim3(b[3] - b[0], b[4] - b[1], b[5] - b[2]), Placement(b[0], b[1], b[2]))


@dataclass(frozen=True)
class Container:
    dim: Dim3

    @classmethod
    def cube(cls, edge: float) -> "Container":
        return cls(Dim3(edge, edge, edge))

    @property
    def volume(self):
        return self.dim.volume

    def as_tuple(self):
        return self.dim.as_tuple()


def boxes_overlap(a: PlacedBox, b: PlacedBox, eps: float = EPS) -> bool:
    """True iff the open interiors of ``a`` and ``b`` intersect."""
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    return all(alo[i] < bhi[i] - eps and blo[i] < ahi[i] - eps for i in range(3))


def separating_axis(a: PlacedBox, b: PlacedBox, eps: float = EPS):
    """Index of an axis along which ``a`` and ``b`` are separated, or None."""
    alo, ahi, blo, bhi = a.lo, a.hi, b.lo, b.hi
    for i in range(3):
        if ahi[i] <= blo[i] + eps or bhi[i] <= alo[i] + eps:
            return i
    return None


def box_inside(b: PlacedBox, c: Container, eps: float = EPS) -> bool:
    lo, hi = b.lo, b.hi
    return all(lo[i] >= -eps for i in range(3)) and all(
        hi[i] <= lim + eps for i, lim in enumerate(c.as_tuple())
    )


def utilization(packed: Iterable[PlacedBox], c: Container) -> float:
    return sum(b.volume for b in packed) / c.volume


# -- vectorised helpers over (n, 6) bound arrays ------------------------------


def overlaps_any(bounds: np.ndarray, boxes: np.ndarray, eps: float = EPS) -> np.ndarray:
    """For each row of ``boxes`` (m, 6), whether it overlaps any row of ``bounds`` (n, 6)."""
    boxes = np.atleast_2d(boxes)
    if len(bounds) == 0:
        return np.zeros(len(boxes), dtype=bool)
    lo_ok = boxes[:, None, :3] < bounds[None, :, 3:] - eps
    hi_ok = bounds[None, :, :3] < boxes[:, None, 3:] - eps
    return np.all(lo_ok & hi_ok, axis=2).any(axis=1)


def inside_container(boxes: np.ndarray, container: Sequence[float], eps: float = EPS) -> np.ndarray:
    boxes = np.atleast_2d(boxes)
    lim = np.asarray(container, dtype=float)
    return np.all(boxes[:, :3] >= -eps, axis=1) & np.all(boxes[:, 3:] <= lim + eps, axis=1)


def verify_packing(bounds: np.ndarray, container: Sequence[float], eps: float = EPS) -> list[str]:
    """Independent pairwise re-check of a packing; returns a list of violations."""
    problems = []
    boxes = [PlacedBox.from_bounds(b) for b in np.asarray(bounds, dtype=float)]
    cont = Container(Dim3(*container))
    for i, b in enumerate(boxes):
        if not box_inside(b, cont, eps):
            problems.append(f"box {i} outside container")
        for j in range(i):
            if boxes_overlap(b, boxes[j], eps):
                problems.append(f"boxes {j} and {i} overlap")
    return problems
