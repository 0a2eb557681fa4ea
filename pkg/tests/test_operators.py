import io
import math

import numpy as np
import pytest

from oracles import GOLDEN
from qpmsa.lattice import LatticeRegion, cube
from qpmsa.operators import (PRESETS, HoppingSpec, OperatorSpec, PotentialSpec, SizeError, SpecError, amo,
                             assemble, covariance_residual, decay_envelope_check, dump_csv, preset,
                             spec_from_config)


def test_amo_matrix_by_hand():
    spec = amo(1.0)
    R = cube([0], 2)
    A = assemble(spec, 0.0, 0.5, R).entries
    n = np.arange(-2, 3)
    expect = np.diag(2 * np.cos(2 * np.pi * n * GOLDEN) - 0.5) + np.eye(5, k=1) + np.eye(5, k=-1)
    assert np.allclose(A, expect, atol=1e-12)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_are_covariant(name):
    spec = preset(name)
    R = cube(np.zeros(spec.d, dtype=np.int64), 3)
    rng = np.random.default_rng(0)
    for _ in range(3):
        x = rng.random(spec.b)
        k = rng.integers(-20, 21, size=spec.d)
        assert covariance_residual(spec, x if spec.b > 1 else x[0], k, R, E=0.3) <= 1e-10


@pytest.mark.parametrize("name", [p for p in PRESETS])
def test_self_adjoint_presets_are_hermitian(name):
    spec = preset(name)
    if not spec.self_adjoint:
        pytest.skip("non-self-adjoint family")
    R = cube(np.zeros(spec.d, dtype=np.int64), 3)
    A = assemble(spec, np.full(spec.b, 0.37), 0.1, R).entries
    assert np.allclose(A, A.conj().T, atol=1e-13)


def test_coupling_scales_off_diagonal_part():
    R = cube([0], 6)
    x, E = 0.2, 0.0
    diag1 = np.diag(assemble(preset("opapp2", coupling=1.0), x, E, R).entries)
    off1 = assemble(preset("opapp2", coupling=1.0), x, E, R).entries - np.diag(diag1)
    A10 = assemble(preset("opapp2", coupling=10.0), x, E, R).entries
    off10 = A10 - np.diag(np.diag(A10))
    mask = np.abs(off10) > 1e-14
    assert np.allclose(off1[mask] / off10[mask], 10.0)
    assert np.allclose(np.diag(A10), diag1)


def test_infinite_coupling_is_diagonal():
    spec = preset("opapp2", coupling=math.inf)
    A = assemble(spec, 0.1, 0.0, cube([0], 4)).entries
    assert np.count_nonzero(A - np.diag(np.diag(A))) == 0


def test_kernel_envelope_holds():
    rep = decay_envelope_check(preset("opapp2"), samples=500, rng=np.random.default_rng(1))
    assert rep.worst_ratio <= 1.0 + 1e-12


def test_truncation_radius():
    hop = HoppingSpec("kernel", K=1.0, c1=1.0, tail=1.0)
    R = hop.truncation_radius()
    assert math.exp(-R) >= math.exp(-40) > math.exp(-(R + 1))


def test_region_cap_and_dimension_checks():
    with pytest.raises(SizeError):
        assemble(amo(1.0), 0.0, 0.0, cube([0], 50), cap=10)
    with pytest.raises(SpecError):
        assemble(amo(1.0), 0.0, 0.0, cube([0, 0], 2))
    with pytest.raises(SpecError):
        preset("nope")


def test_potential_frequency_mismatch():
    with pytest.raises(SpecError):
        PotentialSpec((("cos", 1.0, (1, 0)),))(np.zeros((3, 1)))


def test_spec_json_roundtrip():
    for name in PRESETS:
        spec = preset(name)
        back = OperatorSpec.from_json(spec.to_json())
        assert back.spec_hash() == spec.spec_hash()


def test_spec_from_config_applies_overrides():
    spec = spec_from_config({"preset": "opapp1", "coupling": 3.0})
    assert spec.coupling == 3.0 and spec.name == "opapp1"


def test_dump_is_parseable():
    rm = assemble(amo(2.0), 0.3, 0.0, cube([0], 3))
    buf = io.StringIO()
    dump_csv(rm, buf)
    back = np.loadtxt(io.StringIO(buf.getvalue()), delimiter=",")
    assert np.array_equal(back, rm.entries)


def test_explicit_region_enumeration_order():
    R = LatticeRegion.explicit([[2], [0], [1]])
    A = assemble(amo(1.0), 0.0, 0.0, R).entries
    assert A[0, 1] == 1.0 and A[0, 2] == 0.0
