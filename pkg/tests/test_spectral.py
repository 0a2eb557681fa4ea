import math

import numpy as np
import pytest

from oracles import GOLDEN, free_ids as free_ids_oracle, naive_transfer
from qpmsa.operators import HoppingSpec, SpecError, amo, preset
from qpmsa.spectral import (cosine_potential, eigenvalues, free_ids, ids, ids_modulus, ids_window,
                            localization_profiles, lyapunov, max_window_count, median_rate, schrodinger_form,
                            transfer, true_product)


def test_transfer_matches_naive_product():
    v = cosine_potential(1.5)
    for k in (1, 7, 40):
        tp = transfer(0.3, 0.2, GOLDEN, v, k)
        assert np.allclose(true_product(tp), naive_transfer(0.3, 0.2, GOLDEN, v, k), rtol=1e-10, atol=1e-10)


def test_transfer_determinant_and_inverse():
    v = cosine_potential(2.0)
    tp = transfer(0.1, 0.4, GOLDEN, v, 2000)
    assert tp.det_error < 1e-10
    fwd = transfer(0.1, (0.4 - 5 * GOLDEN) % 1, GOLDEN, v, 5)
    back = transfer(0.1, 0.4, GOLDEN, v, -5)
    assert np.allclose(true_product(back) @ true_product(fwd), np.eye(2), atol=1e-10)
    assert np.array_equal(transfer(0.1, 0.4, GOLDEN, v, 0).product, np.eye(2))


def test_free_elliptic_energy_has_zero_exponent():
    L, se = lyapunov(0.0, GOLDEN, lambda th: np.zeros_like(th), 2000, 20)
    assert abs(L) < 5e-3


def test_lyapunov_equals_log_coupling_in_supercritical_regime():
    L, se = lyapunov(0.0, GOLDEN, cosine_potential(3.0), 5000, 50)
    assert L == pytest.approx(math.log(3.0), abs=5e-3)
    assert L >= 0


def test_lyapunov_argument_checks():
    with pytest.raises(ValueError):
        lyapunov(0.0, GOLDEN, cosine_potential(1.0), 50)
    with pytest.raises(ValueError):
        lyapunov(0.0, GOLDEN, cosine_potential(1.0), 200, 5)


def test_schrodinger_form_rescales_energy():
    v, scale = schrodinger_form(preset("opapp1new", coupling=4.0))
    assert scale == 4.0
    assert v(np.array([0.0]))[0] == pytest.approx(4.0 * 2.0)
    with pytest.raises(SpecError):
        schrodinger_form(preset("opapp2"))


def test_ids_is_monotone_and_normalised():
    E = np.linspace(-6, 6, 121)
    cur = ids(amo(1.5), 0.3, 60, E)
    assert np.all(np.diff(cur.counts) >= 0)
    assert cur.counts[0] == 0 and cur.counts[-1] == 1


def test_ids_window_is_a_difference():
    ev = eigenvalues(amo(1.5), 0.3, 60)
    c = ids(amo(1.5), 0.3, 60, [-1.0, 0.7]).counts
    assert ids_window(amo(1.5), 0.3, 60, -1.0, 0.7, ev) == pytest.approx(c[1] - c[0])


def test_free_ids_against_oracle():
    for E in (-2.5, -1.0, 0.0, 0.4, 1.9, 3.0):
        assert float(free_ids(E)) == pytest.approx(free_ids_oracle(E))
    cur = ids(amo(0.0), 0.0, 400, [-1.0, 0.0, 1.0])
    assert np.abs(cur.counts - free_ids([-1.0, 0.0, 1.0])).max() <= 2e-3


def test_max_window_count_by_brute_force():
    rng = np.random.default_rng(0)
    ev = np.sort(rng.normal(size=60))
    for gap in (0.01, 0.1, 0.5):
        brute = max(np.count_nonzero((ev > e - gap) & (ev <= e)) for e in ev)
        assert max_window_count(ev, gap) == brute


def test_ids_modulus_fit():
    fit = ids_modulus(amo(2.0), [0.1, 0.5], 100, [0.5, 0.2, 0.1, 0.05, 0.02])
    assert math.isfinite(fit.tau) and fit.tau > 0
    with pytest.raises(ValueError):
        ids_modulus(amo(2.0), [0.1], 50, [0.1, 0.2, 0.05, 0.01])


def test_non_self_adjoint_operator_is_rejected():
    hop = HoppingSpec("kernel", table=(((1,), 0.5), ((-1,), 0.2)))
    spec = amo(1.0).with_(hopping=hop)
    assert not spec.self_adjoint
    with pytest.raises(SpecError):
        eigenvalues(spec, 0.0, 10)


def test_localization_rates_separate_regimes():
    strong = median_rate(localization_profiles(amo(10.0), 0.3, 100))
    weak = median_rate(localization_profiles(amo(0.2), 0.3, 100))
    assert strong == pytest.approx(math.log(10.0), rel=0.1)
    assert abs(weak) < 0.05


def test_localized_eigenvectors_concentrate_mass():
    prof = localization_profiles(amo(10.0), 0.3, 60)
    assert np.median([p.mass for p in prof]) > 0.99
