import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import maximal_empty_boxes, random_packing
from packsel.geometry import Dim3, overlaps_any, inside_container
from packsel.spatial import (
    CandidateSet,
    Heightmap,
    ems_update,
    generate_candidates,
    heightmap_place,
    initial_spaces,
    support_fraction,
)


def as_set(spaces):
    return {tuple(int(v) for v in r) for r in spaces}


def build(boxes, n):
    sp = initial_spaces((n, n, n))
    for b in boxes:
        sp = ems_update(sp, b)
    return sp


def test_first_box_leaves_three_spaces():
    sp = build([(0, 0, 0, 10, 10, 10)], 20)
    assert as_set(sp) == {(10, 0, 0, 20, 20, 20), (0, 10, 0, 20, 20, 20), (0, 0, 10, 20, 20, 20)}
    assert as_set(sp) == maximal_empty_boxes([(0, 0, 0, 10, 10, 10)], 20)


def test_no_boxes_one_space():
    assert as_set(initial_spaces((6, 6, 6))) == {(0, 0, 0, 6, 6, 6)}


def test_stacked_slabs_match_enumeration():
    boxes = [(0, 0, 0, 6, 6, 3), (0, 0, 3, 6, 3, 6)]
    sp = build(boxes, 6)
    expected = maximal_empty_boxes(boxes, 6)
    assert as_set(sp) == expected
    assert expected == {(0, 3, 3, 6, 6, 6)}
    assert len(sp) == len(expected)


def test_box_outside_empty_region_rejected():
    sp = build([(0, 0, 0, 4, 4, 4)], 6)
    with pytest.raises(ValueError):
        ems_update(sp, (2, 2, 2, 5, 5, 5))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_incremental_spaces_equal_enumeration(seed):
    boxes = random_packing(np.random.default_rng(seed))
    sp = build(boxes, 6)
    assert len(sp) == len(as_set(sp))
    assert as_set(sp) == maximal_empty_boxes(boxes, 6)


def test_heightmap_resting_heights():
    hm = Heightmap.for_mode((20, 20, 20), "discrete")
    assert heightmap_place(hm, Dim3(2, 2, 2), 0, 0).z == 0
    hm.add_box((0, 0, 0, 10, 10, 10))
    assert heightmap_place(hm, Dim3(2, 2, 2), 0, 0).z == 10
    assert heightmap_place(hm, Dim3(2, 2, 2), 9, 9).z == 10
    assert heightmap_place(hm, Dim3(2, 2, 2), 10, 10).z == 0


def test_heightmap_too_tall_is_infeasible_not_error():
    hm = Heightmap.for_mode((20, 20, 20), "discrete")
    hm.add_box((0, 0, 0, 10, 10, 15))
    assert heightmap_place(hm, Dim3(2, 2, 6), 0, 0) is None


def test_heightmap_off_floor_raises():
    hm = Heightmap.for_mode((20, 20, 20), "discrete")
    with pytest.raises(ValueError):
        heightmap_place(hm, Dim3(2, 2, 2), 19, 0)


def test_heightmap_continuous_resolution():
    hm = Heightmap.for_mode((20, 20, 20), "continuous")
    assert hm.heights.shape == (40, 40)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 8), st.integers(0, 8), st.integers(1, 4), st.integers(1, 4), st.integers(1, 5)), max_size=6))
def test_heightmap_covers_every_footprint(raw):
    hm = Heightmap.for_mode((12, 12, 30), "discrete")
    for x, y, l, w, h in raw:
        z = heightmap_place(hm, Dim3(l, w, h), x, y).z
        hm.add_box((x, y, z, x + l, y + w, z + h))
        assert np.all(hm.heights[x : x + l, y : y + w] >= z + h)
        assert np.all(hm.heights <= 30)


def cands(packed, item, heuristics=("ems",), cap=50, n=20, **kw):
    sp = initial_spaces((n, n, n))
    hm = Heightmap.for_mode((n, n, n), "discrete")
    packed = np.array(packed, dtype=float).reshape(-1, 6)
    for b in packed:
        sp = ems_update(sp, b)
        hm.add_box(b)
    return generate_candidates(sp, packed, hm, (n, n, n), Dim3(*item), heuristics, cap, **kw)


def test_full_size_item_single_candidate():
    c = cands([], (20, 20, 20))
    assert len(c) == 1
    assert c[0].placement.as_tuple() == (0, 0, 0)


def test_empty_container_four_corners():
    c = cands([], (10, 10, 10))
    assert {a.placement.as_tuple() for a in c} == {(0, 0, 0), (10, 0, 0), (0, 10, 0), (10, 10, 0)}
    assert [tuple(p) for p in c.positions] == [(0, 0, 0), (10, 0, 0), (0, 10, 0), (10, 10, 0)]
    assert len(cands([], (10, 10, 10), cap=2)) == 2


def test_oversized_item_no_candidates():
    assert len(cands([], (21, 1, 1))) == 0


def test_unknown_heuristic_rejected():
    with pytest.raises(ValueError):
        cands([], (1, 1, 1), heuristics=("magic",))


@pytest.mark.parametrize("heur", [("ems",), ("corner",), ("extreme",), ("heightmap",), ("ems", "corner", "extreme", "heightmap")])
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), item=st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4)))
def test_candidates_feasible_sorted_unique(heur, seed, item):
    boxes = random_packing(np.random.default_rng(seed), n=8, max_boxes=6)
    c = cands(boxes, item, heuristics=heur, cap=40, n=8, allow_rotation=True)
    assert len(c) <= 40
    b = c.bounds
    packed = np.array(boxes, dtype=float).reshape(-1, 6)
    assert not overlaps_any(packed, b).any()
    assert inside_container(b, (8, 8, 8)).all()
    key = [(p[2], p[1], p[0]) for p in c.positions]
    assert key == sorted(key)
    rows = {tuple(r) for r in np.column_stack([c.positions, c.dims])}
    assert len(rows) == len(c)


def test_candidates_deterministic():
    boxes = random_packing(np.random.default_rng(3), n=8)
    a = cands(boxes, (2, 2, 2), heuristics=("ems", "extreme"), n=8)
    b = cands(boxes, (2, 2, 2), heuristics=("ems", "extreme"), n=8)
    assert a == b


def test_support_requirement_filters_floating_spots():
    c = cands([(0, 0, 0, 4, 4, 4)], (2, 2, 2), heuristics=("corner",), n=8, require_support=1.0)
    for p in c.positions:
        assert p[2] == 0 or (p[2] == 4 and p[0] + 2 <= 4 and p[1] + 2 <= 4)


def test_support_fraction_partial():
    packed = np.array([[0, 0, 0, 2, 2, 2]], dtype=float)
    f = support_fraction(packed, np.array([[1, 0, 2], [0, 0, 0], [5, 5, 2]], dtype=float), np.array([[2, 2, 1]] * 3, dtype=float))
    assert f.tolist() == [0.5, 1.0, 0.0]


def test_candidate_index_round_trip():
    c = cands([], (5, 5, 5))
    for i, a in enumerate(c):
        assert c.index(a) == i
    other = cands([], (4, 4, 4))
    with pytest.raises(ValueError):
        c.index(other[0])
    assert CandidateSet.from_actions(c.actions, cap=c.cap) == c
