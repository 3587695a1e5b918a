"""Spatial indices over a packing and the placement-candidate heuristics built on them.

Empty maximal spaces (EMS) are kept as an ``(n, 6)`` array of
``(x0, y0, z0, x1, y1, z1)`` rows.  After every placement each space the new
box cuts is split into at most six slabs and slabs contained in another
space are dropped, which keeps the list equal to the set of all maximal empty
boxes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ._kernels import ems_update_kernel
from .geometry import EPS, Dim3, Placement, inside_container, overlaps_any

HEURISTICS = ("ems", "corner", "extreme", "heightmap")


def initial_spaces(container: Sequence[float]) -> np.ndarray:
    L, W, H = container
    return np.array([[0.0, 0.0, 0.0, L, W, H]])


def ems_update(spaces: np.ndarray, placed: Sequence[float], eps: float = EPS) -> np.ndarray:
    """Return the maximal-space list after committing a box with bounds ``placed``.

    Raises ``ValueError`` when the box is not contained in any current space,
    i.e. it would overlap packed boxes or leave the container.
    """
    spaces = np.ascontiguousarray(spaces, dtype=float)
    box = np.asarray(placed, dtype=float)
    inside = np.all(spaces[:, :3] <= box[:3] + eps, axis=1) & np.all(spaces[:, 3:] >= box[3:] - eps, axis=1)
    if not inside.any():
        raise ValueError(f"box {tuple(box)} is not inside the empty region")
    return ems_update_kernel(spaces, box, eps)


class Heightmap:
    """Per-cell top height over the container floor.

    Cells are ``cell_x`` by ``cell_y`` units; a box marks every cell its
    footprint interior touches, so resting heights read back are conservative.
    """

    def __init__(self, container: Sequence[float], resolution: tuple[int, int]):
        self.container = tuple(float(v) for v in container)
        self.rx, self.ry = int(resolution[0]), int(resolution[1])
        self.cell_x = self.container[0] / self.rx
        self.cell_y = self.container[1] / self.ry
        self.heights = np.zeros((self.rx, self.ry))

    @classmethod
    def for_mode(cls, container: Sequence[float], mode: str) -> "Heightmap":
        per_unit = 1 if mode == "discrete" else 2
        L, W, _ = container
        return cls(container, (max(int(round(L * per_unit)), 1), max(int(round(W * per_unit)), 1)))

    def copy(self) -> "Heightmap":
        hm = Heightmap.__new__(Heightmap)
        hm.container, hm.rx, hm.ry = self.container, self.rx, self.ry
        hm.cell_x, hm.cell_y = self.cell_x, self.cell_y
        hm.heights = self.heights.copy()
        return hm

    def cell_range(self, x: float, y: float, l: float, w: float):
        i0 = max(int(math.floor(x / self.cell_x + EPS)), 0)
        i1 = min(int(math.ceil((x + l) / self.cell_x - EPS)), self.rx)
        j0 = max(int(math.floor(y / self.cell_y + EPS)), 0)
        j1 = min(int(math.ceil((y + w) / self.cell_y - EPS)), self.ry)
        return i0, max(i1, i0 + 1), j0, max(j1, j0 + 1)

    def cell_ranges(self, pos: np.ndarray, dims: np.ndarray) -> np.ndarray:
        i0 = np.maximum(np.floor(pos[:, 0] / self.cell_x + EPS), 0)
        i1 = np.minimum(np.ceil((pos[:, 0] + dims[:, 0]) / self.cell_x - EPS), self.rx)
        j0 = np.maximum(np.floor(pos[:, 1] / self.cell_y + EPS), 0)
        j1 = np.minimum(np.ceil((pos[:, 1] + dims[:, 1]) / self.cell_y - EPS), self.ry)
        out = np.stack([i0, np.maximum(i1, i0 + 1), j0, np.maximum(j1, j0 + 1)], axis=1)
        return out.astype(np.int64)

    def add_box(self, bounds: Sequence[float]):
        x0, y0, _, x1, y1, z1 = bounds
        i0, i1, j0, j1 = self.cell_range(x0, y0, x1 - x0, y1 - y0)
        region = self.heights[i0:i1, j0:j1]
        np.maximum(region, z1, out=region)

    def support_height(self, x: float, y: float, l: float, w: float) -> float:
        i0, i1, j0, j1 = self.cell_range(x, y, l, w)
        return float(self.heights[i0:i1, j0:j1].max())

    @property
    def max_height(self) -> float:
        return float(self.heights.max())


def heightmap_place(hm: Heightmap, dim: Dim3, x: float, y: float):
    """Resting placement of ``dim`` with its minimum corner at ``(x, y)``.

    Returns ``None`` when the item would stick out of the container top.
    Raises ``ValueError`` if the footprint leaves the floor rectangle.
    """
    L, W, H = hm.container
    if x < -EPS or y < -EPS or x + dim.l > L + EPS or y + dim.w > W + EPS:
        raise ValueError(f"footprint at ({x}, {y}) with size ({dim.l}, {dim.w}) is off the floor")
    z = hm.support_height(x, y, dim.l, dim.w)
    if z + dim.h > H + EPS:
        return None
    return Placement(x, y, z)


@dataclass(frozen=True)
class CandidateAction:
    placement: Placement
    source: str
    dim: Dim3
    feasible: bool = True

    @property
    def bounds(self):
        p, d = self.placement, self.dim
        return (p.x, p.y, p.z, p.x + d.l, p.y + d.w, p.z + d.h)


class CandidateSet:
    """Feasible placements for one item in ``(z, y, x)`` order, at most ``cap`` long.

    Positions and oriented item sizes live in ``(n, 3)`` arrays; the
    :class:`CandidateAction` views are built on access.
    """

    __slots__ = ("positions", "dims", "sources", "cap")

    def __init__(self, positions=None, dims=None, sources=(), cap: int = 50):
        self.positions = np.empty((0, 3)) if positions is None else np.asarray(positions, dtype=float).reshape(-1, 3)
        self.dims = np.empty((0, 3)) if dims is None else np.asarray(dims, dtype=float).reshape(-1, 3)
        self.sources = tuple(sources)
        self.cap = cap

    @classmethod
    def from_actions(cls, actions, cap: int = 50) -> "CandidateSet":
        actions = list(actions)
        return cls(
            [a.placement.as_tuple() for a in actions],
            [a.dim.as_tuple() for a in actions],
            [a.source for a in actions],
            cap,
        )

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> CandidateAction:
        if not -len(self) <= i < len(self):
            raise IndexError(i)
        p, d = self.positions[i], self.dims[i]
        return CandidateAction(Placement(*(float(v) for v in p)), self.sources[i], Dim3(*(float(v) for v in d)))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        return (
            isinstance(other, CandidateSet)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.dims, other.dims)
            and self.sources == other.sources
        )

    def __repr__(self):
        return f"CandidateSet(n={len(self)}, cap={self.cap})"

    @property
    def actions(self) -> tuple:
        return tuple(self)

    def index(self, action: CandidateAction) -> int:
        p = np.asarray(action.placement.as_tuple())
        d = np.asarray(action.dim.as_tuple())
        hit = np.all(np.abs(self.positions - p) <= EPS, axis=1) & np.all(np.abs(self.dims - d) <= EPS, axis=1)
        if not hit.any():
            raise ValueError("action is not in the candidate set")
        return int(np.flatnonzero(hit)[0])

    @property
    def bounds(self) -> np.ndarray:
        return np.concatenate([self.positions, self.positions + self.dims], axis=1)


# -- per-heuristic proposals ---------------------------------------------------


def ems_corner_points(spaces: np.ndarray, dim: Sequence[float], eps: float = EPS) -> np.ndarray:
    """The four bottom corners of every space the item fits in, item flush into each corner."""
    l, w, h = dim
    ext = spaces[:, 3:] - spaces[:, :3]
    fit = (ext[:, 0] >= l - eps) & (ext[:, 1] >= w - eps) & (ext[:, 2] >= h - eps)
    s = spaces[fit]
    if len(s) == 0:
        return np.empty((0, 3))
    x0, y0, z0, x1, y1 = s[:, 0], s[:, 1], s[:, 2], s[:, 3], s[:, 4]
    pts = np.stack(
        [
            np.stack([x0, y0, z0], axis=1),
            np.stack([x1 - l, y0, z0], axis=1),
            np.stack([x0, y1 - w, z0], axis=1),
            np.stack([x1 - l, y1 - w, z0], axis=1),
        ],
        axis=1,
    )
    return pts.reshape(-1, 3)


def corner_points(packed: np.ndarray) -> np.ndarray:
    """Origin plus the three far-corner neighbours of every packed box."""
    pts = [np.zeros((1, 3))]
    if len(packed):
        p = packed
        pts.append(np.stack([p[:, 3], p[:, 1], p[:, 2]], axis=1))
        pts.append(np.stack([p[:, 0], p[:, 4], p[:, 2]], axis=1))
        pts.append(np.stack([p[:, 0], p[:, 1], p[:, 5]], axis=1))
    return np.concatenate(pts, axis=0)


def _project(point: np.ndarray, axis: int, packed: np.ndarray, eps: float) -> np.ndarray:
    others = [a for a in range(3) if a != axis]
    q = point.copy()
    if len(packed) == 0:
        q[axis] = 0.0
        return q
    mask = packed[:, axis + 3] <= point[axis] + eps
    for o in others:
        mask &= (packed[:, o] <= point[o] + eps) & (point[o] < packed[:, o + 3] - eps)
    q[axis] = packed[mask, axis + 3].max() if mask.any() else 0.0
    return q


def extreme_points(packed: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Corner points slid back along each other axis until they meet a box or a wall."""
    pts = [np.zeros((1, 3))]
    for b in packed:
        seeds = ((np.array([b[3], b[1], b[2]]), 0), (np.array([b[0], b[4], b[2]]), 1), (np.array([b[0], b[1], b[5]]), 2))
        for p, own in seeds:
            for axis in range(3):
                if axis != own:
                    pts.append(_project(p, axis, packed, eps)[None])
    return np.concatenate(pts, axis=0)


def heightmap_points(hm: Heightmap, dim: Sequence[float]) -> np.ndarray:
    """Resting positions at every cell-aligned footprint origin on the floor grid."""
    l, w, h = dim
    L, W, H = hm.container
    xs = np.arange(hm.rx) * hm.cell_x
    ys = np.arange(hm.ry) * hm.cell_y
    xs = xs[xs + l <= L + EPS]
    ys = ys[ys + w <= W + EPS]
    if len(xs) == 0 or len(ys) == 0:
        return np.empty((0, 3))
    out = []
    for x in xs:
        for y in ys:
            out.append((x, y, hm.support_height(x, y, l, w)))
    return np.array(out, dtype=float)


def generate_candidates(
    spaces: np.ndarray,
    packed: np.ndarray,
    hm: Heightmap,
    container: Sequence[float],
    item: Dim3,
    heuristics: Iterable[str] = ("ems",),
    cap: int = 50,
    allow_rotation: bool = False,
    require_support: float = 0.0,
    eps: float = EPS,
) -> CandidateSet:
    """Feasible, deduplicated placements for ``item``, lowest ``(z, y, x)`` first, truncated to ``cap``.

    An empty result means the item cannot be placed anywhere.
    """
    if cap < 1:
        raise ValueError("candidate cap must be at least 1")
    heuristics = tuple(heuristics)
    unknown = set(heuristics) - set(HEURISTICS)
    if unknown:
        raise ValueError(f"unknown heuristics {sorted(unknown)}")
    orientations = [item]
    if allow_rotation and abs(item.l - item.w) > eps:
        orientations.append(item.rotated())

    pos_chunks, dim_chunks, src_chunks, checked = [], [], [], []
    for o, dim in enumerate(orientations):
        d = dim.as_tuple()
        for tag in heuristics:
            if tag == "ems":
                pts = ems_corner_points(spaces, d, eps)
            elif tag == "corner":
                pts = corner_points(packed)
            elif tag == "extreme":
                pts = extreme_points(packed, eps)
            else:
                pts = heightmap_points(hm, d)
            if len(pts) == 0:
                continue
            pos_chunks.append(pts)
            dim_chunks.append(np.broadcast_to(np.asarray(d, dtype=float), pts.shape))
            src_chunks.extend([(tag, o)] * len(pts))
            # a corner of an empty space the item fits in is feasible by construction
            checked.append(np.full(len(pts), tag != "ems"))
    if not pos_chunks:
        return CandidateSet(cap=cap)
    pos = np.concatenate(pos_chunks)
    dims = np.concatenate(dim_chunks)
    ok = np.ones(len(pos), dtype=bool)
    need = np.concatenate(checked)
    if need.any():
        b = np.concatenate([pos[need], pos[need] + dims[need]], axis=1)
        ok[need] = inside_container(b, container, eps) & ~overlaps_any(packed, b, eps)
    if require_support > 0:
        ok &= support_fraction(packed, pos, dims, eps) >= require_support - eps
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return CandidateSet(cap=cap)

    # stable sort on (z, y, x, orientation); duplicates become adjacent and the
    # earliest proposal (first heuristic) of each run survives
    key = np.round(np.column_stack([pos[idx], np.array([src_chunks[i][1] for i in idx])]), 9)
    order = np.lexsort((key[:, 3], key[:, 0], key[:, 1], key[:, 2]))
    key = key[order]
    fresh = np.ones(len(order), dtype=bool)
    fresh[1:] = np.any(key[1:] != key[:-1], axis=1)
    idx = idx[order[fresh]][:cap]

    return CandidateSet(pos[idx], dims[idx], [src_chunks[i][0] for i in idx], cap)


def support_fraction(packed: np.ndarray, pos: np.ndarray, dims: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Fraction of each footprint resting on a box top (or the floor) at its base height."""
    pos = np.atleast_2d(pos)
    dims = np.atleast_2d(dims)
    out = np.zeros(len(pos))
    floor = pos[:, 2] <= eps
    out[floor] = 1.0
    if len(packed) and not floor.all():
        touch = np.abs(packed[None, :, 5] - pos[:, None, 2]) <= eps
        ox = np.clip(
            np.minimum(packed[None, :, 3], (pos[:, 0] + dims[:, 0])[:, None])
            - np.maximum(packed[None, :, 0], pos[:, None, 0]),
            0,
            None,
        )
        oy = np.clip(
            np.minimum(packed[None, :, 4], (pos[:, 1] + dims[:, 1])[:, None])
            - np.maximum(packed[None, :, 1], pos[:, None, 1]),
            0,
            None,
        )
        area = (ox * oy * touch).sum(axis=1) / (dims[:, 0] * dims[:, 1])
        out[~floor] = np.minimum(area[~floor], 1.0)
    return out
