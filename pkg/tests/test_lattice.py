import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import brute_has_width, shape_point_sets
from qpmsa.lattice import (ExhaustionError, LatticeRegion, build_exhaustion, check_gdist, cube, diam, dist,
                           enumerate_elementary_shapes, generalized, has_width_at_least, merge_count,
                           provable_constant, translate, width)


@pytest.mark.parametrize("d,N,count", [(1, 5, 1), (2, 3, 5), (3, 2, 21)])
def test_shape_counts_match_enumeration_oracle(d, N, count):
    shapes = enumerate_elementary_shapes(d, N)
    assert len(shapes) == count
    sets = {frozenset(map(tuple, s.offsets().tolist())) for s in shapes}
    assert len(sets) == count                      # pairwise distinct as point sets
    assert sets == shape_point_sets(d, N)


def test_shape_rejects_bad_arguments():
    with pytest.raises(ValueError):
        enumerate_elementary_shapes(0, 3)


def test_width_of_square_examples():
    sq = cube([0, 0], 5)
    assert has_width_at_least(sq, 5)
    assert not has_width_at_least(sq, 6)


def test_single_point_has_no_width():
    assert not has_width_at_least(LatticeRegion.explicit([[0, 0]]), 1)


def test_line_in_plane_has_width_zero():
    line = LatticeRegion.explicit([[0, j] for j in range(10)])
    assert width(line, 5) == 0


@pytest.mark.parametrize("d", [1, 2, 3])
@pytest.mark.parametrize("N", [3, 7, 12])
def test_cube_width_is_size(d, N):
    assert width(cube(np.zeros(d, dtype=np.int64), N), N + 2) == N


def test_l_shape_width_is_size():
    for s in enumerate_elementary_shapes(2, 6)[1:]:
        assert width(translate(s, [0, 0]), 8) == 6


def test_width_decreases_as_neck_thins():
    # two 9x9 blocks joined by a horizontal neck of thickness t
    def dumbbell(t):
        pts = [(i, j) for i in range(9) for j in range(9)]
        pts += [(i + 18, j) for i in range(9) for j in range(9)]
        pts += [(i, j) for i in range(9, 18) for j in range(4 - t // 2, 4 - t // 2 + t)]
        return LatticeRegion.explicit(pts)
    ws = [width(dumbbell(t), 6) for t in (9, 7, 5, 3)]
    assert ws == sorted(ws, reverse=True) and ws[0] > ws[-1]


@pytest.mark.parametrize("M", [1, 2, 3])
def test_width_agrees_with_brute_force_on_small_regions(M):
    rng = np.random.default_rng(M)
    for _ in range(4):
        pts = {(int(i), int(j)) for i in range(-4, 5) for j in range(-4, 5)}
        holes = rng.integers(-4, 5, size=(3, 2))
        pts -= {tuple(map(int, h)) for h in holes}
        R = LatticeRegion.explicit(sorted(pts))
        assert has_width_at_least(R, M) == brute_has_width(pts, 2, M)


def test_distance_examples():
    assert dist([0, 0], cube([2, 2], 1)) == 1
    assert diam(cube([0, 0, 0], 4)) == 8
    assert len(generalized(([0, 0], [5, 5]), [3, 3])) == 27


@given(st.lists(st.tuples(st.integers(-5, 5), st.integers(-5, 5)), min_size=1, max_size=30))
def test_enumeration_is_canonical(pts):
    a = LatticeRegion.explicit(pts)
    b = LatticeRegion.explicit(list(reversed(pts)) + pts)
    assert np.array_equal(a.points, b.points)
    assert len(a) == len(set(pts))
    assert all(tuple(p) < tuple(q) for p, q in zip(a.points.tolist(), a.points[1:].tolist()))


@given(st.integers(1, 3), st.integers(1, 4), st.lists(st.integers(-3, 3), min_size=3, max_size=3))
def test_generalized_is_set_difference(lo, size, z):
    d = 2
    R = generalized(([lo] * d, [lo + size] * d), z[:d])
    box = {(i, j) for i in range(lo, lo + size + 1) for j in range(lo, lo + size + 1)}
    shifted = {(i + z[0], j + z[1]) for i, j in box}
    assert set(map(tuple, R.points.tolist())) == box - shifted


def test_region_json_roundtrip():
    s = enumerate_elementary_shapes(2, 3)[2]
    R = translate(s, [4, -1])
    back = LatticeRegion.from_json(json.loads(R.dumps()))
    assert back == R


def test_exhaustion_one_dimensional_shell_count():
    N, M = 40, 2
    ex = build_exhaustion(cube([0], N), [0], M)
    assert abs(ex.l - int(np.ceil(N / (4 * M)))) <= 1
    assert all(has_width_at_least(a, M) for a in ex.annuli)


def test_corner_exhaustion_merges_thin_shells():
    R = cube([0, 0], 40)
    ex = build_exhaustion(R, [-40, 40], 4)
    assert all(has_width_at_least(a, 4) for a in ex.annuli)
    assert ex.shells[-1] == R
    assert merge_count(ex) <= ex.C_d


def test_exhaustion_at_tenth_scale_is_short_at_centre():
    for d in (1, 2):
        ex = build_exhaustion(cube(np.zeros(d, dtype=np.int64), 30), np.zeros(d, dtype=np.int64), 3)
        assert ex.l <= 3


def test_exhaustion_precondition():
    with pytest.raises(ExhaustionError):
        build_exhaustion(cube([0], 20), [0], 3)
    with pytest.raises(ExhaustionError):
        build_exhaustion(cube([0], 20), [50], 1)


def test_lower_distance_bound_and_corrected_upper_bound():
    rng = np.random.default_rng(0)
    for _ in range(30):
        s = enumerate_elementary_shapes(2, 20)[rng.integers(5)]
        R = translate(s, [0, 0])
        x = R.points[rng.integers(len(R))]
        ex = build_exhaustion(R, x, int(rng.integers(1, 3)))
        sl = check_gdist(ex, C=provable_constant(ex))
        assert (sl >= 0).all()


def test_sup_norm_lower_bound_fails_around_removed_corner():
    s = [t for t in enumerate_elementary_shapes(2, 20) if t.signs == ("<", "<")][0]
    R = translate(s, [0, 0])
    ex = build_exhaustion(R, [-20, 0], 1)
    assert (check_gdist(ex, metric="sup", C=provable_constant(ex))[:, 0] < 0).any()
    assert (check_gdist(ex, metric="mixed", C=provable_constant(ex))[:, 0] >= 0).all()
