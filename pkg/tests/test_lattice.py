import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spatialpk.lattice import build_lattice, local_diff_sumsq, pair_diff_sumsq


def brute_force_edges(nx, ny, mask):
    edges = set()
    for a, b in itertools.combinations(range(nx * ny), 2):
        ra, ca = divmod(a, nx)
        rb, cb = divmod(b, nx)
        if abs(ra - rb) + abs(ca - cb) == 1 and mask[a] and mask[b]:
            edges.add((a, b))
    return edges


def test_single_voxel():
    lat = build_lattice(1, 1)
    assert lat.n_edges == 0
    assert local_diff_sumsq(lat, 0, [3.0]) == 0.0


def test_two_by_two():
    lat = build_lattice(2, 2)
    assert lat.n_edges == 4
    assert np.all(lat.degree() == 2)


def test_full_25_grid_matches_enumeration():
    lat = build_lattice(25, 25)
    assert lat.n_edges == 2 * 25 * 24 == 1200
    assert {tuple(e) for e in lat.edges} == brute_force_edges(25, 25, np.ones(625, bool))
    deg = lat.degree().reshape(25, 25)
    assert deg[12, 12] == 4 and deg[0, 0] == 2 and deg[0, 5] == 3


def test_rejects_bad_mask_length():
    with pytest.raises(ValueError):
        build_lattice(3, 3, np.ones(8, bool))


def test_pair_sumsq_examples():
    assert pair_diff_sumsq(build_lattice(4, 3), np.full(12, 2.5)) == 0.0
    assert pair_diff_sumsq(build_lattice(2, 1), [0.0, 3.0]) == 9.0


def test_local_sumsq_examples():
    lat = build_lattice(3, 3)
    field = np.zeros(9)
    field[4] = 1.0
    assert local_diff_sumsq(lat, 4, field) == 4.0
    assert local_diff_sumsq(lat, 4, np.ones(9)) == 0.0
    mask = np.zeros(9, bool)
    mask[[0, 8]] = True
    isolated = build_lattice(3, 3, mask)
    assert local_diff_sumsq(isolated, 0, np.arange(9.0)) == 0.0


def test_local_sumsq_rejects_unmasked():
    mask = np.ones(9, bool)
    mask[4] = False
    lat = build_lattice(3, 3, mask)
    with pytest.raises(IndexError):
        local_diff_sumsq(lat, 4, np.zeros(9))


def test_double_counting_5x5():
    lat = build_lattice(5, 5)
    field = np.random.default_rng(0).normal(size=25)
    total = sum(local_diff_sumsq(lat, i, field) for i in range(25))
    assert pair_diff_sumsq(lat, field) == pytest.approx(0.5 * total, rel=1e-12)


grids = st.tuples(st.integers(1, 7), st.integers(1, 7)).flatmap(
    lambda s: st.tuples(
        st.just(s),
        arrays(bool, s[0] * s[1], elements=st.booleans()),
        arrays(float, s[0] * s[1], elements=st.floats(-10, 10)),
    )
)


@settings(max_examples=150, deadline=None)
@given(grids)
def test_lattice_properties(case):
    (nx, ny), mask, field = case
    lat = build_lattice(nx, ny, mask)
    assert {tuple(e) for e in lat.edges} == brute_force_edges(nx, ny, mask)
    assert len({tuple(e) for e in lat.edges}) == lat.n_edges
    assert lat.degree().sum() == 2 * lat.n_edges
    assert set(np.unique(lat.degree())) <= {0, 1, 2, 3, 4}
    masked = np.flatnonzero(mask)
    for i in range(nx * ny):
        nbrs = lat.neighbours(i)
        if not mask[i]:
            assert nbrs.size == 0
        for j in nbrs:
            assert mask[j] and i in lat.neighbours(j)
    local = sum(local_diff_sumsq(lat, i, field) for i in masked)
    assert local == pytest.approx(2 * pair_diff_sumsq(lat, field), rel=1e-9, abs=1e-9)
    # values outside the mask never enter any statistic
    shifted = field.copy()
    shifted[~mask] += 100.0
    assert pair_diff_sumsq(lat, shifted) == pytest.approx(pair_diff_sumsq(lat, field), abs=1e-9)
