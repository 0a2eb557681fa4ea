"""Acceptance suite: one PASS/FAIL line per criterion.

Run directly (``python tests/test_acceptance.py``) for the printout alone, or
through pytest, where each criterion is a test and the lines are repeated in
the terminal summary.
"""
from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))
from oracles import (FREE_GROWTH_E3, FREE_RATE_E3, GOLDEN, brute_extreme_discrepancy,  # noqa: E402
                     free_ids, shape_point_sets)

BASELINES = Path(__file__).parent / "baselines"
LINES: list[str] = []


def report(k: int, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f}s]"
    LINES.append(line)
    print(line)


# --------------------------------------------------------------------------
# 1. exact identities
# --------------------------------------------------------------------------

def _random_instance(rng):
    from qpmsa.lattice import cube
    from qpmsa.operators import amo, preset
    choice = rng.integers(6)
    if choice == 0:
        spec, N = preset("opapp1new", coupling=float(rng.uniform(2, 20))), int(rng.integers(10, 200))
    elif choice == 1:
        spec, N = amo(float(rng.uniform(0.2, 5))), int(rng.integers(10, 200))
    elif choice == 2:
        spec, N = preset("opapp2"), int(rng.integers(10, 150))
    elif choice == 3:
        spec, N = preset("opapp4"), int(rng.integers(3, 10))
    elif choice == 4:
        spec, N = preset("opapp5"), int(rng.integers(10, 150))
    else:
        spec, N = preset("opapp6"), int(rng.integers(3, 10))
    x = rng.random(spec.b)
    R = cube(np.zeros(spec.d, dtype=np.int64), N)
    return spec, (float(x[0]) if spec.b == 1 else x), R


def check_exact_identities(n_res=200, n_schur=500, n_block=500):
    from qpmsa.cartan import SchurError, schur_complement
    from qpmsa.greens import SingularBlockError, resolvent_residual, schur_test_bound
    from qpmsa.operators import assemble
    from qpmsa.spectral import cosine_potential, transfer
    rng = np.random.default_rng(20240101)
    worst_res, done, skipped = 0.0, 0, 0
    while done < n_res:
        spec, x, R = _random_instance(rng)
        A = assemble(spec, x, float(rng.uniform(-1, 1)), R).entries
        if len(R) > 400:
            continue
        mask = rng.random(len(R)) < rng.uniform(0.2, 0.8)
        if mask.all() or not mask.any():
            continue
        try:
            rep = resolvent_residual(A, mask)
        except SingularBlockError:
            skipped += 1
            continue
        worst_res = max(worst_res, rep.identity_residual / rep.contract)
        done += 1
    res_ok = worst_res <= 1.0

    schur_fail = 0
    for _ in range(n_schur):
        n, m = rng.integers(2, 60, size=2)
        M = rng.standard_normal((n, m)) * rng.uniform(0.01, 100)
        if schur_test_bound(M) <= np.linalg.norm(M, 2):
            schur_fail += 1

    worst_block, equiv_fail, n_sing = 0.0, 0, 0
    for i in range(n_block):
        T = rng.standard_normal((40, 40))
        V = np.sort(rng.choice(40, 8, replace=False))
        if i % 5 == 0:
            # plant a singular Schur complement: T4 := T3 T1^-1 T2 + rank-7 matrix
            keep = np.setdiff1d(np.arange(40), V)
            T1, T2, T3 = T[np.ix_(keep, keep)], T[np.ix_(keep, V)], T[np.ix_(V, keep)]
            low = rng.standard_normal((8, 7)) @ rng.standard_normal((7, 8))
            T[np.ix_(V, V)] = T3 @ np.linalg.solve(T1, T2) + low
        try:
            rep = schur_complement(T, V)
        except SchurError:
            continue
        if rep.singular_T != rep.singular_S:
            equiv_fail += 1
        n_sing += rep.singular_S
        if not rep.singular_T:
            worst_block = max(worst_block, rep.block_error)
    block_ok = worst_block <= 1e-10 and equiv_fail == 0

    worst_det = 0.0
    for _ in range(200):
        lam = float(rng.uniform(0, 10))
        tp = transfer(float(rng.uniform(-5, 5)), float(rng.random()), GOLDEN, cosine_potential(lam),
                      int(rng.choice([-1, 1]) * rng.integers(1, 5000)))
        worst_det = max(worst_det, tp.det_error)
    det_ok = worst_det <= 1e-8
    ok = res_ok and schur_fail == 0 and block_ok and det_ok
    detail = (f"resolvent worst residual/contract {worst_res:.2e} over {n_res} ({skipped} singular redrawn); "
              f"Schur test failures {schur_fail}/{n_schur}; sub-block error {worst_block:.1e}, "
              f"singularity mismatches {equiv_fail} ({n_sing} singular); transfer det defect {worst_det:.1e}")
    return ok, detail


def test_criterion_1_exact_identities():
    t = time.time()
    ok, detail = check_exact_identities()
    report(1, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 2. geometry
# --------------------------------------------------------------------------

def _exhaustion_instances(n=500, seed=11):
    from qpmsa.lattice import build_exhaustion, enumerate_elementary_shapes, translate
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        d = int(rng.integers(1, 4))
        N = int(rng.integers(*[(20, 61), (10, 25), (10, 13)][d - 1]))
        shapes = enumerate_elementary_shapes(d, N)
        R = translate(shapes[rng.integers(len(shapes))], rng.integers(-5, 6, size=d))
        x = R.points[rng.integers(len(R))]
        M = int(rng.integers(1, N // 10 + 1))
        out.append((d, build_exhaustion(R, x, M, N=N)))
    return out


_EXH_CACHE = {}


def exhaustion_instances():
    if "v" not in _EXH_CACHE:
        _EXH_CACHE["v"] = _exhaustion_instances()
    return _EXH_CACHE["v"]


def check_geometry():
    from qpmsa.lattice import check_gdist, cube, enumerate_elementary_shapes, has_width_at_least, provable_constant, width
    counts = [len(enumerate_elementary_shapes(d, N)) for d, N in ((1, 5), (2, 3), (3, 2))]
    oracle = [len(shape_point_sets(d, N)) for d, N in ((1, 5), (2, 3), (3, 2))]
    counts_ok = counts == [1, 5, 21] == oracle
    width_bad = [(d, N) for d in (1, 2, 3) for N in range(1, 13)
                 if width(cube(np.zeros(d, dtype=np.int64), N), N + 2) != N]
    ann_bad = literal_bad = corrected_bad = nested_bad = 0
    per_d = {1: 0, 2: 0, 3: 0}
    insts = exhaustion_instances()
    for d, ex in insts:
        if not all(has_width_at_least(a, ex.M) for a in ex.annuli):
            ann_bad += 1
        sizes = [len(s) for s in ex.shells]
        if sizes != sorted(sizes) or ex.shells[-1] != ex.base:
            nested_bad += 1
        if (check_gdist(ex) < 0).any():
            literal_bad += 1
            per_d[d] += 1
        if (check_gdist(ex, C=provable_constant(ex)) < 0).any():
            corrected_bad += 1
    structural_ok = counts_ok and not width_bad and ann_bad == 0 and nested_bad == 0
    literal_ok = literal_bad == 0
    detail = (f"shape counts {counts}; width failures {width_bad or 'none'}; {len(insts)} exhaustions: "
              f"annulus width failures {ann_bad}, nesting failures {nested_bad}; "
              f"literal Gdist (C_d=3^d) violated in {literal_bad} (d=1: {per_d[1]}, d=2: {per_d[2]}, d=3: {per_d[3]}); "
              f"corrected constant 2+4*merges violated in {corrected_bad}")
    return structural_ok, literal_ok, corrected_bad == 0, detail


def test_criterion_2_geometry():
    t = time.time()
    structural, literal, corrected, detail = check_geometry()
    report(2, structural and literal and corrected, detail, time.time() - t)
    assert structural and corrected, detail


@pytest.mark.xfail(strict=True, reason="the Gdist upper bound with C_d = 3^d is false for d = 1, 2 (see ledger)")
def test_criterion_2_literal_gdist():
    from qpmsa.lattice import check_gdist
    assert not any((check_gdist(ex) < 0).any() for _, ex in exhaustion_instances())


# --------------------------------------------------------------------------
# 3. free-model oracles
# --------------------------------------------------------------------------

def check_free_oracles():
    from qpmsa.greens import greens
    from qpmsa.lattice import cube
    from qpmsa.operators import amo, assemble
    from qpmsa.spectral import cosine_potential, ids, transfer
    free = amo(0.0)
    rates = {N: greens(assemble(free, 0.0, 3.0, cube([0], N))).decay_fit.rate for N in (100, 150, 200)}
    rate_err = max(abs(r / FREE_RATE_E3 - 1) for r in rates.values())
    N = 500
    E = np.linspace(-2.5, 2.5, 2001)
    curve = ids(free, 0.0, N, E)
    ids_err = float(np.max(np.abs(curve.counts - np.array([free_ids(e) for e in E]))))
    tp = transfer(3.0, 0.0, GOLDEN, cosine_potential(0.0), 10_000)
    growth = tp.log_norm / 10_000
    growth_err = abs(growth / FREE_GROWTH_E3 - 1)
    ok = rate_err <= 0.02 and ids_err <= 2 / (2 * N + 1) and growth_err <= 0.01
    detail = (f"resolvent rate {', '.join(f'N={k}: {v:.5f}' for k, v in rates.items())} vs {FREE_RATE_E3:.6f} "
              f"(max rel err {rate_err:.1e}); IDS max err {ids_err:.2e} <= {2 / (2 * N + 1):.2e}; "
              f"transfer growth {growth:.6f} vs {FREE_GROWTH_E3:.6f}")
    return ok, detail


def test_criterion_3_free_oracles():
    t = time.time()
    ok, detail = check_free_oracles()
    report(3, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 4. positive Lyapunov exponent
# --------------------------------------------------------------------------

def check_lyapunov():
    from qpmsa.spectral import cosine_potential, lyapunov
    L, se = lyapunov(0.0, GOLDEN, cosine_potential(3.0), 10_000, 100)
    ok = L >= math.log(3) - 0.05
    return ok, f"AMO lambda=3 L(0) = {L:.5f} +- {se:.1e} vs ln 3 - 0.05 = {math.log(3) - 0.05:.5f}"


def test_criterion_4_lyapunov():
    t = time.time()
    ok, detail = check_lyapunov()
    report(4, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 5. multi-scale reproduction
# --------------------------------------------------------------------------

def check_msa(n_x=50):
    from qpmsa.msa import default_c2, run_induction, schedule
    from qpmsa.operators import amo
    sched = schedule(15, 1.25, 500)
    xs = np.random.default_rng(7).random(n_x)
    c2 = default_c2(20.0)
    strong = [run_induction(amo(20.0), float(x), 0.0, sched, c2, seed=i) for i, x in enumerate(xs)]
    good = [r for r in strong if r.hypotheses_ok and abs(r.rate_ratio - 1) <= 0.15]
    weak = [run_induction(amo(1.0), float(x), 0.0, sched, c2, seed=i) for i, x in enumerate(xs)]
    fails = [r for r in weak if r.verdict == "hypotheses-not-met"]
    frac_good, frac_fail = len(good) / n_x, len(fails) / n_x
    ratios = np.array([r.rate_ratio for r in strong])
    ok = frac_good >= 0.8 and frac_fail >= 0.5
    detail = (f"lambda=20: {len(good)}/{n_x} with hypotheses met and final/base rate within 15% "
              f"(median ratio {np.median(ratios):.3f}); lambda=1 control: {len(fails)}/{n_x} hypotheses-not-met; "
              f"scales {list(sched.scales)}")
    return ok, detail


@pytest.mark.slow
def test_criterion_5_msa():
    t = time.time()
    ok, detail = check_msa()
    report(5, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 6. large-deviation trend
# --------------------------------------------------------------------------

def ldt_setup():
    from qpmsa.ldt import PropertyPParams, Sampler
    from qpmsa.operators import preset
    return preset("opapp1new", coupling=10.0), PropertyPParams(0.5, 0.5, 0.5 * math.log(10)), Sampler("mc", 2000, 0)


def check_ldt():
    from qpmsa.ldt import CensoredError, fit_zeta_from, measure_bad_set, target_exponent
    spec, params, smp = ldt_setup()
    ests = [measure_bad_set(spec, 0.0, N, params, smp) for N in (40, 80, 160)]
    fr = [e.fraction for e in ests]
    baseline = json.loads((BASELINES / "ldt.json").read_text())["final_fraction"]
    mono = all(b <= a for a, b in zip(fr, fr[1:]))
    t1, t2, t3 = target_exponent(0.9, 1, 1), target_exponent(0.9, 2, 2), target_exponent(0.9, 2, 1, skew=True)
    try:
        line = fit_zeta_from(ests, t1).line()
    except CensoredError:
        line = f"zeta_hat censored (zero fraction at N=160); target exponent={t1:.6g}"
    print(f"fit_zeta: {line}")
    print(f"target exponents: b=1 kappa=1 -> {t1:.6g}; b=2 kappa=2 -> {t2:.6g}; skew b=2 kappa=1 -> {t3:.6g}")
    arith = math.isclose(t1, 0.9) and math.isclose(t2, 0.01875) and math.isclose(t3, 0.01875)
    ok = mono and fr[-1] <= baseline and arith
    detail = (f"bad fractions N=40/80/160: {fr[0]:.4f}/{fr[1]:.4f}/{fr[2]:.4f} (2000 MC samples); "
              f"baseline {baseline}; targets {t1:g}, {t2:g}, {t3:g}")
    return ok, detail


@pytest.mark.slow
def test_criterion_6_ldt():
    t = time.time()
    ok, detail = check_ldt()
    report(6, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 7. discrepancy
# --------------------------------------------------------------------------

def check_discrepancy():
    from qpmsa.equidistribution import DynamicsSpec, discrepancy, golden, orbit
    rng = np.random.default_rng(3)
    worst = 0.0
    for N in list(range(1, 40)) + list(rng.integers(40, 201, size=20)):
        pts = rng.random(N) if N % 2 else orbit(DynamicsSpec("shift", (golden(),)), [rng.random()], np.arange(N))[:, 0]
        worst = max(worst, abs(discrepancy(pts, "exact_1d").D_N - brute_extreme_discrepancy(pts)))
    brute_ok = worst <= 1e-12
    dyn = DynamicsSpec("shift", (golden(),))
    full = orbit(dyn, [0.0], np.arange(100_000))[:, 0]
    Ns = sorted(set(range(1, 1001)) | set(np.unique(np.geomspace(1000, 100_000, 200).astype(int))))
    ratios = [N * discrepancy(full[:N], "exact_1d").D_N / (3 * math.log(N)) for N in Ns if N >= 2]
    golden_ok = max(ratios) <= 1.0
    skew = DynamicsSpec("skew_shift", (golden(),), b=2)
    sk = [discrepancy(orbit(skew, [0.0, 0.0], np.arange(N)), "grid:256").D_N for N in (512, 1024, 2048, 4096)]
    skew_ok = all(b < a for a, b in zip(sk, sk[1:]))
    ok = brute_ok and golden_ok and skew_ok
    detail = (f"exact_1d vs brute force max diff {worst:.1e}; golden max N*D_N/(3 log N) = {max(ratios):.3f} "
              f"over {len(ratios)} N up to 1e5; skew grid:256 D_N {', '.join(f'{v:.4f}' for v in sk)}")
    return ok, detail


def test_criterion_7_discrepancy():
    t = time.time()
    ok, detail = check_discrepancy()
    report(7, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 8. Cartan trend
# --------------------------------------------------------------------------

def check_cartan():
    from qpmsa.cartan import cartan_measure, diag_sine_family, envelope_exponent
    fam = diag_sine_family()
    eps = [10.0 ** -k for k in range(2, 9)]
    res = cartan_measure(fam, eps)
    c = envelope_exponent(res.points)
    dominated = all(p.measure <= res.bound_rhs(p.eps, fam) * (1 + 1e-12) for p in res.points)
    ok = res.monotone and c > 0 and res.fitted_c > 0 and dominated
    detail = (f"measures {', '.join(f'{p.measure:.3e}' for p in res.points)}; monotone={res.monotone}; "
              f"mes ~ eps^c with c = {c:.4f}; envelope C exp(-c u) with c = {res.fitted_c:.3g} dominates={dominated}")
    return ok, detail


def test_criterion_8_cartan():
    t = time.time()
    ok, detail = check_cartan()
    report(8, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 9. localisation contrast
# --------------------------------------------------------------------------

def check_localization():
    from qpmsa.operators import amo
    from qpmsa.spectral import localization_profiles, median_rate
    strong = median_rate(localization_profiles(amo(10.0), 0.1234, 300))
    weak = median_rate(localization_profiles(amo(0.2), 0.1234, 300))
    ok = strong >= 5 * max(weak, 0.0) and strong > 0
    return ok, f"median decay rate lambda=10: {strong:.4f}; lambda=0.2: {weak:.2e}; ratio test strong >= 5 * weak"


def test_criterion_9_localization():
    t = time.time()
    ok, detail = check_localization()
    report(9, ok, detail, time.time() - t)
    assert ok, detail


# --------------------------------------------------------------------------
# 10. reproducibility
# --------------------------------------------------------------------------

REPRO_CONFIG = {
    "seed": 5,
    "operator": {"preset": "opapp1new", "coupling": 10},
    "energy": {"values": [0.0]},
    "stages": {
        "discrepancy": {"Ns": [128, 256]},
        "lyapunov": {"k": 2000, "samples": 20},
        "ids": {"N": 60, "n_energies": 41},
        "localize": {"N": 60},
        "modulus": {"N": 60, "n_x": 3},
        "greens": {"N": 20, "n_x": 5},
        "cartan": {"eps": [1e-2, 1e-3, 1e-4], "grid": 20000},
        "ldt": {"Ns": [10, 20], "count": 40},
        "msa": {"M0": 5, "rho": 1.25, "N": 40, "n_x": 2},
    },
}


def check_reproducibility(tmp: Path):
    from qpmsa import harness
    m1 = harness.run(REPRO_CONFIG, tmp / "t1", threads=1)
    m4 = harness.run(REPRO_CONFIG, tmp / "t4", threads=4)
    same_threads = {k: v["artifacts"] for k, v in m1.stages.items()} == {k: v["artifacts"] for k, v in m4.stages.items()}
    rep = harness.replay(m1.path, tmp / "replay")
    files1 = sorted(p.name for p in (tmp / "t1").iterdir())
    listed = sorted([n for s in m1.stages.values() for n in s["artifacts"]] + ["manifest.json"])
    bitwise = all((tmp / "t1" / n).read_bytes() == (tmp / "replay" / n).read_bytes()
                  for s in m1.stages.values() for n in s["artifacts"])
    ok = same_threads and rep.identical and bitwise and files1 == listed
    detail = (f"{len(m1.stages)} stages; threads 1 vs 4 identical={same_threads}; replay identical={rep.identical}, "
              f"bytes equal={bitwise}; no orphan files={files1 == listed}")
    return ok, detail


def test_criterion_10_reproducibility(tmp_path):
    t = time.time()
    ok, detail = check_reproducibility(tmp_path)
    report(10, ok, detail, time.time() - t)
    assert ok, detail


if __name__ == "__main__":
    import tempfile
    checks = [check_exact_identities, None, check_free_oracles, check_lyapunov, check_msa, check_ldt,
              check_discrepancy, check_cartan, check_localization, None]
    for k, fn in enumerate(checks, start=1):
        t = time.time()
        if k == 2:
            s, lit, cor, detail = check_geometry()
            report(2, s and lit and cor, detail, time.time() - t)
        elif k == 10:
            with tempfile.TemporaryDirectory() as d:
                ok, detail = check_reproducibility(Path(d))
            report(10, ok, detail, time.time() - t)
        else:
            ok, detail = fn()
            report(k, ok, detail, time.time() - t)
