"""Command-line entry point: ``qpmsa <subcommand> ...`` (also ``python -m qpmsa``)."""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .greens import HypothesisError, SingularBlockError
from .operators import SizeError, SpecError


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def _x(s: str):
    v = _floats(s)
    return v[0] if len(v) == 1 else v


def _emit_json(obj, out: str | None = None) -> None:
    text = json.dumps(harness._clean(obj), indent=1, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _emit_csv(header, rows, out: str | None = None) -> None:
    import csv
    fh = open(out, "w", newline="") if out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([harness._fmt(v) for v in r])
    finally:
        if out:
            fh.close()


def load_spec(args):
    """--spec takes a preset name, 'amo', or a TOML/JSON file holding an [operator] table."""
    from .operators import amo, spec_from_config
    name = args.spec
    if name == "amo":
        return amo(args.lam if args.lam is not None else 1.0)
    p = Path(name)
    if p.exists():
        if p.suffix == ".json":
            cfg = json.loads(p.read_text())
        else:
            cfg = harness.load_config(p)
        return spec_from_config(cfg.get("operator", cfg))
    cfg = {"preset": name}
    if args.lam is not None:
        cfg["coupling"] = args.lam
    return spec_from_config(cfg)


def _spec_args(p):
    p.add_argument("--spec", default="opapp1new", help="preset name, 'amo', or a config file")
    p.add_argument("--lam", type=float, default=None, help="coupling lambda")


# --------------------------------------------------------------------------
# handlers
# --------------------------------------------------------------------------

def cmd_region(args):
    from .lattice import LatticeRegion, cube, enumerate_elementary_shapes, translate, width
    if args.file:
        R = LatticeRegion.from_json(json.loads(Path(args.file).read_text()))
    else:
        c = np.zeros(args.d, dtype=np.int64) if args.center is None else np.array(_ints(args.center))
        if args.signs:
            signs = tuple(None if s == "." else s for s in args.signs)
            shp = [s for s in enumerate_elementary_shapes(len(signs), args.N) if s.signs == signs]
            if not shp:
                raise SpecError(f"no elementary shape with signs {args.signs!r}")
            R = translate(shp[0], c)
        else:
            R = cube(c, args.N)
    if args.action == "dump":
        print(R.dumps())
    else:
        print(width(R, args.max_width or args.N))


def cmd_orbit(args):
    from .equidistribution import DynamicsSpec, orbit
    dyn = DynamicsSpec(args.kind, tuple(_floats(args.omega)), args.b)
    x0 = _floats(args.x0) if args.x0 else [0.0] * dyn.b
    pts = orbit(dyn, x0, np.arange(args.N))
    _emit_csv(["n"] + [f"x{i + 1}" for i in range(pts.shape[1])],
              ([n, *row] for n, row in enumerate(pts)), args.out)


def cmd_discrepancy(args):
    from .equidistribution import DynamicsSpec, discrepancy, orbit
    dyn = DynamicsSpec(args.kind, tuple(_floats(args.omega)), args.b)
    x0 = _floats(args.x0) if args.x0 else [0.0] * dyn.b
    rows = []
    for N in _ints(args.N):
        st = discrepancy(orbit(dyn, x0, np.arange(N)), args.method)
        rows.append((N, st.D_N, st.err))
    _emit_csv(["N", "D_N", "err"], rows, args.out)


def cmd_dioph(args):
    from .equidistribution import certify_diophantine, certify_strong
    fn = certify_strong if args.strong else certify_diophantine
    cert = fn(_x(args.omega), args.kappa, args.tau, args.kmax)
    _emit_json(cert.to_json(), args.out)


def cmd_operator(args):
    from .lattice import cube
    from .operators import assemble, dump_csv
    spec = load_spec(args)
    R = cube(np.zeros(spec.d, dtype=np.int64), args.N)
    rm = assemble(spec, _x(args.x), args.E, R)
    if args.dump:
        with open(args.dump, "w") as fh:
            dump_csv(rm, fh)
    else:
        dump_csv(rm, sys.stdout)


def cmd_greens(args):
    from .greens import classify, greens
    from .lattice import cube
    from .operators import assemble
    spec = load_spec(args)
    R = cube(np.zeros(spec.d, dtype=np.int64), args.N)
    if args.action == "classify":
        g = greens(assemble(spec, _x(args.x), args.E, R), sigma_t=args.sigma_t)
        cl = classify(g, args.N, args.sigma, args.sigma_t, args.c2)
        out = cl.to_json()
        out.update({"op_norm": g.op_norm, "singular": g.singular, "fitted_rate": g.decay_fit.rate})
        _emit_json(out, args.out)
        return
    xs = (np.arange(args.n_x) + 0.5) / args.n_x
    rows = []
    for x in xs:
        for E in _floats(args.energies):
            g = greens(assemble(spec, float(x) if spec.b == 1 else [float(x)] * spec.b, E, R), sigma_t=args.sigma_t)
            cl = classify(g, args.N, args.sigma, args.sigma_t, args.c2)
            rows.append((x, E, g.op_norm, g.decay_fit.rate, cl.is_G, cl.is_SG))
    _emit_csv(["x", "E", "norm", "fitted_rate", "is_G", "is_SG"], rows, args.out)


def cmd_cartan(args):
    from .cartan import cartan_measure, diag_sine_family, scalar_family
    fam = diag_sine_family() if args.family == "diag_sine" else scalar_family()
    res = cartan_measure(fam, _floats(args.eps_list), args.grid)
    _emit_csv(["eps", "measure", "bound_rhs"], res.rows(fam), args.out)
    print(f"# fitted_c={res.fitted_c:.6g} monotone={res.monotone} mc3_ok={res.mc3_ok}", file=sys.stderr)


def cmd_msa(args):
    from .msa import default_c2, run_induction, schedule
    cfg = harness.load_config(args.config) if args.config else {"operator": {"preset": "opapp1new", "coupling": 20}}
    from .operators import spec_from_config
    spec = spec_from_config(cfg["operator"])
    m = cfg.get("stages", {}).get("msa", cfg.get("msa", {}))
    rho = m.get("rho", 1.25)
    sigma, sigma_t = m.get("sigma", 0.7), m.get("sigma_t", 1.0)
    if not 1 < rho < 1 + sigma_t - sigma:
        raise harness.ConfigError([f"stages.msa.rho: {rho} is outside (1, {1 + sigma_t - sigma:g})"])
    sched = schedule(int(m.get("M0", 15)), rho, int(m.get("N", 500)), sigma, sigma_t)
    E = float(cfg.get("energy", {}).get("values", [0.0])[0])
    x = _x(args.x) if args.x else 0.1234
    res = run_induction(spec, x, E, sched, float(m.get("c2_init", default_c2(spec.coupling))),
                        float(m.get("varsigma", 0.9)), seed=int(cfg.get("seed", 0)))
    _emit_json(res.to_json(), args.out)
    if res.verdict == "hypotheses-not-met":
        return harness.EXIT_HYPOTHESIS
    return 0


def cmd_spectral(args):
    from . import spectral
    spec = load_spec(args)
    if args.action == "lyapunov":
        v, scale = spectral.schrodinger_form(spec)
        om = spec.dynamics.omega[0]
        rows = [(E, *spectral.lyapunov(scale * E, om, v, args.k, args.samples)) for E in _floats(args.energies)]
        _emit_csv(["E", "L", "stderr"], rows, args.out)
    elif args.action == "ids":
        E = np.linspace(args.E_min, args.E_max, args.n_energies)
        _emit_csv(["E", "k"], spectral.ids(spec, _x(args.x), args.N, E).rows(), args.out)
    elif args.action == "modulus":
        xs = (np.arange(args.n_x) + 0.5) / args.n_x
        fit = spectral.ids_modulus(spec, xs, args.N, _floats(args.gaps))
        _emit_csv(["gap", "count", "censored"], zip(fit.gaps, fit.counts, fit.censored), args.out)
        print(f"# tau={fit.tau:.6g} residual={fit.residual:.3g}", file=sys.stderr)
    else:
        prof = spectral.localization_profiles(spec, _x(args.x), args.N)
        _emit_csv(["eigenvalue", "peak", "rate", "mass", "r"],
                  [(q.eigenvalue, q.peak, q.rate, q.mass, q.r) for q in prof], args.out)
        print(f"# median_rate={spectral.median_rate(prof):.6g}", file=sys.stderr)


def cmd_ldt(args):
    from . import ldt
    spec = load_spec(args)
    params = ldt.PropertyPParams(args.mu, args.zeta, args.c2)
    smp = ldt.Sampler(args.sampler, args.count, args.seed)
    Ns = _ints(args.N)
    if args.action == "measure":
        _emit_json({"estimates": [ldt.measure_bad_set(spec, args.E, N, params, smp).to_json() for N in Ns]}, args.out)
    elif args.action == "zeta":
        ests = [ldt.measure_bad_set(spec, args.E, N, params, smp) for N in Ns]
        target = ldt.target_exponent(args.sigma, spec.b, args.kappa, skew=spec.dynamics.kind == "skew_shift")
        try:
            fit = ldt.fit_zeta_from(ests, target)
            print(fit.line(), file=sys.stderr)
            out = vars(fit)
        except ldt.CensoredError as exc:
            print(f"zeta_hat=censored ({exc})  target exponent={target:.6g}", file=sys.stderr)
            out = {"zeta": None, "target": target, "Ns": Ns, "fractions": [e.fraction for e in ests]}
        _emit_json(out, args.out)
    elif args.action == "sublinear":
        est = ldt.measure_bad_set(spec, args.E, Ns[0], params, smp)
        xs = smp.points()[:20]
        rep = ldt.sublinear_check(spec, est.cover, args.L, xs, args.delta)
        _emit_json(vars(rep), args.out)
    else:
        if len(Ns) != 3:
            raise SpecError("ldt improve needs three scales, e.g. --N 20,40,80")
        _emit_json(ldt.scale_improvement_report(spec, args.E, tuple(Ns), params, smp, args.delta).to_json(), args.out)


def cmd_validate(args):
    problems = harness.validate(harness.load_config(args.config))
    for p in problems:
        print(p)
    if problems:
        return harness.EXIT_VALIDATION
    print("ok")
    return 0


def cmd_run(args):
    man = harness.run(harness.load_config(args.config), args.out, args.threads)
    print(man.path)
    return man.exit_code


def cmd_replay(args):
    rep = harness.replay(args.manifest, args.out)
    print(f"identical: {rep.identical} ({len(rep.replayed.stages)} stages)")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    P = argparse.ArgumentParser(prog="qpmsa", description=__doc__)
    sub = P.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("region", help="dump an elementary region or print its width")
    p.add_argument("action", choices=["dump", "width"])
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--center", default=None)
    p.add_argument("--signs", default=None, help="one of . < > per axis, e.g. '<<'")
    p.add_argument("--file", default=None, help="region JSON")
    p.add_argument("--max-width", type=int, default=None)
    p.set_defaults(fn=cmd_region)

    def dyn_args(p):
        p.add_argument("--kind", default="shift", choices=["shift", "multi_shift", "product_shift", "skew_shift"])
        p.add_argument("--omega", default=repr((math.sqrt(5) - 1) / 2))
        p.add_argument("--b", type=int, default=1)
        p.add_argument("--x0", default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("orbit", help="orbit points as CSV")
    dyn_args(p)
    p.add_argument("--N", type=int, default=100)
    p.set_defaults(fn=cmd_orbit)

    p = sub.add_parser("discrepancy", help="CSV rows (N, D_N, err)")
    dyn_args(p)
    p.add_argument("--N", default="100,1000")
    p.add_argument("--method", default="exact_1d", help="exact | exact_1d | grid:G")
    p.set_defaults(fn=cmd_discrepancy)

    p = sub.add_parser("dioph", help="finite-horizon Diophantine certificate (JSON)")
    p.add_argument("--omega", default=repr((math.sqrt(5) - 1) / 2))
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--kmax", type=int, default=10_000)
    p.add_argument("--strong", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_dioph)

    p = sub.add_parser("operator", help="assemble a finite-volume matrix")
    p.add_argument("action", choices=["assemble"])
    _spec_args(p)
    p.add_argument("--x", default="0.0")
    p.add_argument("--E", type=float, default=0.0)
    p.add_argument("--N", type=int, default=5)
    p.add_argument("--dump", default=None, help="write dense CSV here instead of stdout")
    p.set_defaults(fn=cmd_operator)

    p = sub.add_parser("greens", help="classify one region or sweep phases")
    p.add_argument("action", choices=["classify", "sweep"])
    _spec_args(p)
    p.add_argument("--x", default="0.0")
    p.add_argument("--E", type=float, default=0.0)
    p.add_argument("--energies", default="0.0")
    p.add_argument("--n-x", type=int, default=20)
    p.add_argument("--N", type=int, default=20)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--sigma-t", type=float, default=1.0)
    p.add_argument("--c2", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_greens)

    p = sub.add_parser("cartan", help="bad-set measure against eps")
    p.add_argument("action", choices=["sweep"])
    p.add_argument("--family", default="diag_sine", choices=["diag_sine", "scalar"])
    p.add_argument("--eps-list", default="1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_cartan)

    p = sub.add_parser("msa", help="multi-scale induction at one phase")
    p.add_argument("action", choices=["run"])
    p.add_argument("--config", default=None)
    p.add_argument("--x", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_msa)

    p = sub.add_parser("spectral", help="Lyapunov exponents, IDS, modulus, localisation")
    p.add_argument("action", choices=["lyapunov", "ids", "modulus", "localize"])
    _spec_args(p)
    p.add_argument("--energies", default="0.0")
    p.add_argument("--k", type=int, default=10_000)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--x", default="0.1234")
    p.add_argument("--N", type=int, default=300)
    p.add_argument("--n-x", type=int, default=4)
    p.add_argument("--gaps", default="1e-1,1e-2,1e-3,1e-4")
    p.add_argument("--E-min", type=float, default=-4.0)
    p.add_argument("--E-max", type=float, default=4.0)
    p.add_argument("--n-energies", type=int, default=401)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_spectral)

    p = sub.add_parser("ldt", help="large-deviation bad-set estimates")
    p.add_argument("action", choices=["measure", "zeta", "sublinear", "improve"])
    _spec_args(p)
    p.add_argument("--E", type=float, default=0.0)
    p.add_argument("--N", default="20,40")
    p.add_argument("--mu", type=float, default=0.5)
    p.add_argument("--zeta", type=float, default=0.5)
    p.add_argument("--c2", type=float, default=0.5 * math.log(10))
    p.add_argument("--sampler", default="mc", choices=["mc", "grid"])
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.9)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--L", type=int, default=200)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_ldt)

    p = sub.add_parser("validate", help="list every config violation")
    p.add_argument("config")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("run", help="execute a config and write artifacts plus manifest")
    p.add_argument("config")
    p.add_argument("--out", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("replay", help="re-run a manifest and compare checksums")
    p.add_argument("manifest")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_replay)
    return P


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return int(args.fn(args) or 0)
    except harness.ConfigError as exc:
        for v in exc.violations:
            print(f"error: {v}", file=sys.stderr)
        return harness.EXIT_VALIDATION
    except (SpecError, harness.ReplayMismatch, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return harness.EXIT_NUMERIC if isinstance(exc, (SizeError, harness.ReplayMismatch)) else harness.EXIT_VALIDATION
    except HypothesisError as exc:
        print(f"hypothesis not met: {exc}", file=sys.stderr)
        return harness.EXIT_HYPOTHESIS
    except (SingularBlockError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return harness.EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
