from __future__ import annotations

import itertools

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from compcbf.regions import Box, Region


def int_box(dim):
    pair = st.tuples(st.integers(0, 4), st.integers(0, 4)).map(sorted)
    return st.lists(pair, min_size=dim, max_size=dim).map(Box.from_bounds)


def lattice(dim):
    # integer-cornered boxes: a non-empty remainder always holds a point of the half-integer lattice
    axis = np.arange(0.0, 4.01, 0.5)
    return np.array(list(itertools.product(axis, repeat=dim)))


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_box_subtraction_matches_lattice_oracle(data):
    dim = data.draw(st.integers(1, 3))
    box = data.draw(int_box(dim))
    cutters = data.draw(st.lists(int_box(dim), max_size=4))
    region = Region.of(box, minus=cutters)
    assert region.is_empty() == (not region.contains(lattice(dim)).any())


@settings(max_examples=300, deadline=None)
@given(st.data())
def test_intersection_matches_lattice_oracle(data):
    dim = data.draw(st.integers(1, 2))
    a = Region.of(data.draw(int_box(dim)), minus=data.draw(st.lists(int_box(dim), max_size=2)))
    b = Region.of(data.draw(int_box(dim)), minus=data.draw(st.lists(int_box(dim), max_size=2)))
    pts = lattice(dim)
    assert a.intersects(b) == bool((a.contains(pts) & b.contains(pts)).any())


def test_closed_faces_touch():
    a = Region.of(Box.cube(0.0, 1.0, 2))
    b = Region.of(Box.cube(1.0, 2.0, 2))
    assert a.intersects(b)
    # removing the shared corner leaves nothing in common
    assert not Region.of(Box.cube(0.0, 1.0, 2), minus=[Box.cube(1.0, 1.0, 2)]).intersects(b)


def test_room_regions_are_disjoint():
    n = 50
    p0 = Region.of(Box.cube(20.5, 22.5, n))
    p1 = Region.of(Box.cube(0.0, 20.0, n))
    p2 = Region.of(Box.cube(23.0, 45.0, n))
    assert not p0.intersects(p1) and not p0.intersects(p2) and not p1.intersects(p2)
    rest = Region.of(Box.cube(0.0, 45.0, n), minus=[b for r in (p0, p1, p2) for b in r.boxes])
    assert rest.intersects(p0.union(p1)) is False
    assert not rest.is_empty()


def test_json_round_trip():
    r = Region.of(Box.cube(0.0, 2.0, 2), minus=[Box.cube(0.5, 1.0, 2)])
    s = Region.from_json(r.to_json())
    pts = np.random.default_rng(0).uniform(0, 2, (500, 2))
    assert np.array_equal(r.contains(pts), s.contains(pts))
