"""Independent reference implementations used only by the tests."""
import itertools

import numpy as np


def voxelize(boxes, n):
    """Occupancy counts on an integer grid; any cell above 1 is an overlap."""
    occ = np.zeros((n, n, n), dtype=int)
    for b in boxes:
        x0, y0, z0, x1, y1, z1 = (int(v) for v in b)
        occ[x0:x1, y0:y1, z0:z1] += 1
    return occ


def maximal_empty_boxes(boxes, n):
    """Every maximal empty integer box in an ``n``-cube, by exhaustive enumeration."""
    occ = voxelize(boxes, n) > 0
    P = np.zeros((n + 1,) * 3, dtype=int)
    P[1:, 1:, 1:] = occ.cumsum(0).cumsum(1).cumsum(2)

    def filled(x0, y0, z0, x1, y1, z1):
        return (P[x1, y1, z1] - P[x0, y1, z1] - P[x1, y0, z1] - P[x1, y1, z0]
                + P[x0, y0, z1] + P[x0, y1, z0] + P[x1, y0, z0] - P[x0, y0, z0])

    spans = [(a, b) for a in range(n) for b in range(a + 1, n + 1)]
    out = set()
    for (x0, x1), (y0, y1), (z0, z1) in itertools.product(spans, spans, spans):
        if filled(x0, y0, z0, x1, y1, z1):
            continue
        grown = [
            (x0 - 1, y0, z0, x1, y1, z1), (x0, y0 - 1, z0, x1, y1, z1), (x0, y0, z0 - 1, x1, y1, z1),
            (x0, y0, z0, x1 + 1, y1, z1), (x0, y0, z0, x1, y1 + 1, z1), (x0, y0, z0, x1, y1, z1 + 1),
        ]
        if any(min(g[:3]) >= 0 and max(g[3:]) <= n and filled(*g) == 0 for g in grown):
            continue
        out.add((x0, y0, z0, x1, y1, z1))
    return out


def random_packing(rng, n=6, max_boxes=5, max_edge=4):
    """Random non-overlapping integer boxes placed one at a time at random free positions."""
    boxes = []
    occ = np.zeros((n, n, n), dtype=bool)
    for _ in range(int(rng.integers(1, max_boxes + 1))):
        d = rng.integers(1, max_edge + 1, size=3)
        spots = [
            p for p in itertools.product(*(range(n - int(d[a]) + 1) for a in range(3)))
            if not occ[p[0]:p[0] + d[0], p[1]:p[1] + d[1], p[2]:p[2] + d[2]].any()
        ]
        if not spots:
            break
        p = spots[int(rng.integers(len(spots)))]
        occ[p[0]:p[0] + d[0], p[1]:p[1] + d[1], p[2]:p[2] + d[2]] = True
        boxes.append(tuple(int(v) for v in p) + tuple(int(p[a] + d[a]) for a in range(3)))
    return boxes
