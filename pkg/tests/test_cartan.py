import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import schur_2x2
from qpmsa.cartan import (SchurError, cartan_measure, diag_sine_family, envelope_exponent, operator_family,
                          scalar_family, schur_complement)
from qpmsa.lattice import cube
from qpmsa.operators import amo


@given(st.floats(0.5, 5), st.floats(-3, 3), st.floats(-3, 3), st.floats(-5, 5))
def test_two_by_two_schur_complement(a, b, c, d):
    T = np.array([[a, b], [c, d]])
    rep = schur_complement(T, [1])
    assert rep.S[0, 0] == pytest.approx(d - c * b / a, rel=1e-12, abs=1e-12)
    if abs(a * d - b * c) > 1e-6:
        S, inv22 = schur_2x2(a, b, c, d)
        assert rep.S[0, 0] == pytest.approx(S, rel=1e-12, abs=1e-12)
        assert 1 / rep.S[0, 0] == pytest.approx(inv22, rel=1e-9)


def test_block_diagonal_schur_is_trailing_block():
    rng = np.random.default_rng(0)
    T1 = rng.normal(size=(4, 4)) + 5 * np.eye(4)
    T4 = rng.normal(size=(3, 3)) + 5 * np.eye(3)
    T = np.zeros((7, 7))
    T[:4, :4], T[4:, 4:] = T1, T4
    rep = schur_complement(T, [4, 5, 6])
    assert np.allclose(rep.S, T4) and rep.block_error < 1e-12


def test_sandwich_bounds_on_random_matrices():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(3, 12))
        T = rng.normal(size=(n, n))
        V = rng.choice(n, size=int(rng.integers(1, n)), replace=False)
        try:
            rep = schur_complement(T, V)
        except SchurError:
            continue
        if not (rep.singular_S or rep.singular_T):
            assert rep.lower_ok and rep.upper_ok and rep.block_error < 1e-8


def test_singular_t1_is_reported():
    T = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(SchurError):
        schur_complement(T, [1])


def test_scalar_family_measure_is_two_eps():
    res = cartan_measure(scalar_family(), [1e-2, 1e-3, 1e-4], n_grid=10 ** 5)
    for p in res.points:
        assert p.measure == pytest.approx(2 * p.eps, rel=1e-3)
    assert res.monotone
    assert envelope_exponent(res.points) == pytest.approx(1.0, abs=1e-3)


def test_diag_sine_measure_scales_linearly():
    res = cartan_measure(diag_sine_family(), [1e-3, 1e-4, 1e-5], n_grid=10 ** 5)
    assert res.monotone
    assert envelope_exponent(res.points) == pytest.approx(1.0, abs=0.05)
    assert all(m <= rhs * (1 + 1e-9) for _, m, rhs in res.rows(diag_sine_family()))


def test_operator_family_is_monotone():
    fam = operator_family(amo(5.0), cube([0], 5), E=0.3)
    res = cartan_measure(fam, [1e-1, 1e-2, 1e-3], n_grid=4000)
    assert res.monotone and res.points[0].measure > 0
    assert math.isfinite(res.fitted_c)
