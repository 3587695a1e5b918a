"""Compiled inner loops for empty-maximal-space maintenance and footprint features."""
import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _intersects(s, i, b, eps):
    for a in range(3):
        if not (s[i, a] < b[a + 3] - eps and b[a] < s[i, a + 3] - eps):
            return False
    return True


@njit(cache=True, inline="always")
def _contains(rows, o, c, eps):
    for a in range(3):
        if rows[c, a] < rows[o, a] - eps or rows[c, a + 3] > rows[o, a + 3] + eps:
            return False
    return True


@njit(cache=True, inline="always")
def _same(rows, o, c, eps):
    for a in range(6):
        if abs(rows[o, a] - rows[c, a]) > eps:
            return False
    return True


@njit(cache=True)
def _split(spaces, box, eps, out):
    """Write the updated space list into ``out``; return (n_total, n_untouched, n_children).

    Rows ``[0, n_untouched)`` are spaces the box does not touch, the following
    ``n_children`` rows are split products, not yet pruned.
    """
    n = spaces.shape[0]
    k = 0
    for i in range(n):
        if not _intersects(spaces, i, box, eps):
            for a in range(6):
                out[k, a] = spaces[i, a]
            k += 1
    n_old = k
    for i in range(n):
        if not _intersects(spaces, i, box, eps):
            continue
        for a in range(3):
            if box[a] - spaces[i, a] > eps:
                for c in range(6):
                    out[k, c] = spaces[i, c]
                out[k, a + 3] = box[a]
                k += 1
            if spaces[i, a + 3] - box[a + 3] > eps:
                for c in range(6):
                    out[k, c] = spaces[i, c]
                out[k, a] = box[a + 3]
                k += 1
    return k, n_old, k - n_old


@njit(cache=True)
def _prune_mask(out, k, n_old, eps):
    """Keep-mask for rows of ``out[:k]``; split products contained in another row are dropped."""
    keep = np.ones(k, dtype=np.bool_)
    for c in range(n_old, k):
        for o in range(k):
            if o == c:
                continue
            if _contains(out, o, c, eps):
                # of two identical rows the earlier one survives
                if o > c and _same(out, o, c, eps):
                    continue
                keep[c] = False
                break
    return keep


@njit(cache=True)
def ems_update_kernel(spaces, box, eps):
    out = np.empty((spaces.shape[0] * 7 + 1, 6))
    k, n_old, _ = _split(spaces, box, eps, out)
    keep = _prune_mask(out, k, n_old, eps)
    return out[:k][keep]


@njit(cache=True)
def ems_after_stats_kernel(spaces, boxes, eps):
    """Count and summed volume of the space list after hypothetically placing each box."""
    m = boxes.shape[0]
    counts = np.empty(m, dtype=np.int64)
    volumes = np.empty(m)
    out = np.empty((spaces.shape[0] * 7 + 1, 6))
    for j in range(m):
        k, n_old, _ = _split(spaces, boxes[j], eps, out)
        keep = _prune_mask(out, k, n_old, eps)
        cnt = 0
        vol = 0.0
        for r in range(k):
            if keep[r]:
                cnt += 1
                vol += (out[r, 3] - out[r, 0]) * (out[r, 4] - out[r, 1]) * (out[r, 5] - out[r, 2])
        counts[j] = cnt
        volumes[j] = vol
    return counts, volumes


@njit(cache=True)
def footprint_stats_kernel(hm, cells, tops, zs):
    """Per candidate: mean gap under the footprint and change in summed neighbour bumpiness.

    ``cells`` rows are ``(i0, i1, j0, j1)`` half-open cell ranges of each footprint.
    """
    m = cells.shape[0]
    rx, ry = hm.shape
    gaps = np.empty(m)
    bump = np.empty(m)
    for c in range(m):
        i0, i1, j0, j1 = cells[c, 0], cells[c, 1], cells[c, 2], cells[c, 3]
        t = tops[c]
        z = zs[c]
        g = 0.0
        for i in range(i0, i1):
            for j in range(j0, j1):
                d = z - hm[i, j]
                if d > 0:
                    g += d
        gaps[c] = g / max((i1 - i0) * (j1 - j0), 1)
        delta = 0.0
        # pairs along x touching the footprint
        for i in range(max(i0 - 1, 0), min(i1, rx - 1)):
            for j in range(j0, j1):
                a = hm[i, j]
                b = hm[i + 1, j]
                a2 = max(a, t) if i0 <= i < i1 else a
                b2 = max(b, t) if i0 <= i + 1 < i1 else b
                delta += abs(a2 - b2) - abs(a - b)
        for i in range(i0, i1):
            for j in range(max(j0 - 1, 0), min(j1, ry - 1)):
                a = hm[i, j]
                b = hm[i, j + 1]
                a2 = max(a, t) if j0 <= j < j1 else a
                b2 = max(b, t) if j0 <= j + 1 < j1 else b
                delta += abs(a2 - b2) - abs(a - b)
        bump[c] = delta
    return gaps, bump
