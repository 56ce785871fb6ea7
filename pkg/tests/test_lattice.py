import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glfield.errors import GeometryError, SizeError
from glfield.lattice import MAX_HALF_WIDTH, build_box, dist_to_boundary, l1_ball


@pytest.mark.parametrize("N, n, nb, ni", [(1, 9, 8, 1), (2, 25, 16, 9), (64, 129 ** 2, 4 * 128, 127 ** 2)])
def test_box_counts(N, n, nb, ni):
    d = build_box(N)
    assert d.n_sites == n
    assert d.boundary_indices.size == nb
    assert d.interior_indices.size == ni


@pytest.mark.parametrize("N", [0, -3, MAX_HALF_WIDTH + 1])
def test_box_size_errors(N):
    with pytest.raises(SizeError):
        build_box(N)


def test_large_box_allowed():
    d = build_box(2048)
    assert d.n_sites == 4097 ** 2


def test_index_bijection_row_major():
    d = build_box(3)
    seen = [d.index(x) for x in itertools.product(range(-3, 4), repeat=2)]
    assert seen == list(range(d.n_sites))
    assert all(d.site(d.index(x)) == x for x in itertools.product(range(-3, 4), repeat=2))


def test_interior_sites_have_four_neighbors():
    d = build_box(4)
    for k in d.interior_indices:
        assert len(d.neighbors(d.site(k))) == 4
    for k in d.boundary_indices:
        assert len(d.neighbors(d.site(k))) < 4


def test_plus_ball():
    d = build_box(4)
    b = l1_ball(d, (0, 0), 1.5)
    assert sorted(b.sites()) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]
    assert sorted(b.sites("boundary")) == [(-1, 0), (0, -1), (0, 1), (1, 0)]
    assert b.sites("interior") == [(0, 0)]


def test_unit_ball_is_single_site():
    b = l1_ball(build_box(4), (0, 0), 1.0)
    assert b.sites() == [(0, 0)]
    assert b.sites("boundary") == [(0, 0)]


def test_ball_25_matches_enumeration():
    d = build_box(4)
    b = l1_ball(d, (0, 0), 2.5)
    brute = sorted(x for x in itertools.product(range(-4, 5), repeat=2) if abs(x[0]) + abs(x[1]) <= 2)
    assert sorted(b.sites()) == brute
    assert len(brute) == 13


def test_ball_off_center_and_containment():
    d = build_box(10)
    b = l1_ball(d, (7, -3), 3.2)
    brute = sorted(x for x in itertools.product(range(-10, 11), repeat=2)
                   if abs(x[0] - 7) + abs(x[1] + 3) < 3.2)
    assert sorted(b.sites()) == brute
    l1_ball(d, (7, 0), 4.0)  # reaches x1 = 10 exactly
    with pytest.raises(GeometryError):
        l1_ball(d, (8, 0), 4.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.1, 6.0), st.floats(0.0, 3.0))
def test_ball_monotone(R, extra):
    d = build_box(10)
    small = l1_ball(d, (1, -2), R)
    big = l1_ball(d, (1, -2), R + extra)
    assert small.issubset(big)


@pytest.mark.parametrize("x, N, want", [((0, 0), 10, 10), ((10, 3), 10, 0), ((7, -9), 10, 1)])
def test_dist_to_boundary(x, N, want):
    assert dist_to_boundary(build_box(N), x) == want


def test_dist_zero_iff_boundary():
    d = build_box(5)
    for x in itertools.product(range(-5, 6), repeat=2):
        assert (dist_to_boundary(d, x) == 0) == d.is_boundary(x)
