import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import FREE_RATE_E3, free_resolvent
from qpmsa.greens import (HypothesisError, c2_cap, classify, coupling_check, fit_decay, greens,
                          ml_condition, ml_threshold, power_norm, resolvent_residual, schur_test_bound,
                          window_cover)
from qpmsa.lattice import LatticeRegion, cube
from qpmsa.operators import amo, assemble
from qpmsa.spectral import transfer


def test_free_resolvent_matches_closed_form():
    for N in (5, 20, 60):
        g = greens(assemble(amo(0.0), 0.0, 3.0, cube([0], N)))
        assert np.abs(g.inverse - free_resolvent(N, 3.0)).max() < 1e-12


def test_free_decay_rate():
    g = greens(assemble(amo(0.0), 0.0, 3.0, cube([0], 100)))
    assert g.decay_fit.rate == pytest.approx(FREE_RATE_E3, rel=1e-3)


def test_identity_is_good_with_unit_norm():
    g = greens(np.eye(6))
    assert g.op_norm == pytest.approx(1.0)
    c = classify(g, N=6, c2=0.5)
    assert c.is_G and c.is_SG


def test_zero_row_is_singular():
    A = np.eye(5)
    A[2] = 0
    g = greens(A)
    assert g.singular and g.op_norm == math.inf
    assert not classify(g, N=5).is_G


def test_power_iteration_matches_svd():
    rng = np.random.default_rng(3)
    for _ in range(10):
        G = rng.normal(size=(40, 40))
        assert power_norm(G) == pytest.approx(np.linalg.norm(G, 2), rel=2e-3)
        assert schur_test_bound(G) >= np.linalg.norm(G, 2) * (1 - 1e-12)


def test_classification_is_monotone_in_c2():
    rng = np.random.default_rng(4)
    for _ in range(10):
        g = greens(assemble(amo(3.0), rng.random(), rng.uniform(-2, 2), cube([0], 30)))
        flags = [classify(g, c2=c).is_G for c in np.linspace(0.05, 3.0, 15)]
        # once it fails it stays failed
        assert flags == sorted(flags, reverse=True)


def test_c2_cap_is_enforced():
    g = greens(np.eye(3))
    with pytest.raises(ValueError):
        classify(g, c2=c2_cap(1.0, 1.0) * 1.01, c1=1.0)
    with pytest.raises(ValueError):
        classify(g, c2=0.0)


@given(st.integers(0, 2 ** 31), st.integers(4, 20))
def test_resolvent_identity(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 4 * np.eye(n)
    mask = rng.random(n) < 0.5
    if mask.all() or not mask.any():
        mask[0] = not mask[0]
    rep = resolvent_residual(A, mask)
    assert rep.within_contract
    assert rep.greso_min_slack >= -1e-9 and rep.greson_min_slack >= -1e-9


def test_green_function_corner_tracks_transfer_matrix():
    # |G(first, last)| = 1 / |det|, and det is the (1,1) entry of the transfer product
    rng = np.random.default_rng(5)
    lg, lt = [], []
    for _ in range(50):
        x, E, N = rng.random(), rng.uniform(-3, 3), int(rng.integers(10, 40))
        A = assemble(amo(2.0), x, E, LatticeRegion.explicit(np.arange(N)[:, None])).entries
        g = greens(A)
        if g.singular:
            continue
        lg.append(math.log(abs(g.inverse[0, -1])))
        tp = transfer(E, x, amo(2.0).dynamics.omega[0], lambda th: 4.0 * np.cos(2 * np.pi * th), N)
        lt.append(-tp.log_norm)
    assert np.corrcoef(lg, lt)[0, 1] >= 0.95


def test_fit_decay_on_exact_exponential():
    R = cube([0], 30)
    r = np.abs(R.points[:, 0][:, None] - R.points[:, 0][None, :])
    fit = fit_decay(np.exp(-0.7 * r), R)
    assert fit.rate == pytest.approx(0.7) and fit.worst_rate == pytest.approx(0.7)


def test_multiscale_condition_threshold():
    M0 = ml_threshold((0.5, 0.5), 0.5, 1.0, 1, M_max=400)
    assert M0 is not None
    assert ml_condition(M0, M0 + 20, (0.5, 0.5), 0.5, 1.0, 1) <= math.log(0.5)


def test_window_cover_and_coupling_on_large_disorder():
    R = cube([0], 40)
    windows, owner = window_cover(R, 8)
    assert (owner >= 0).all()
    A = assemble(amo(50.0), 0.123, 0.7, R).entries
    rep = coupling_check(A, R, windows, owner, 8, 8, 0.5, 1.0, (0.5, 0.5))
    if rep.hypotheses_ok:
        assert rep.conclusion_ok


def test_coupling_requires_full_cover():
    R = cube([0], 10)
    windows, owner = window_cover(R, 4)
    owner = owner.copy()
    owner[0] = -1
    with pytest.raises(HypothesisError):
        coupling_check(np.eye(len(R)), R, windows, owner, 4, 4, 0.5, 1.0, (0.5, 0.5))
