"""Declarative experiments: validation, staged execution, manifests and replay.

A config is a TOML tree::

    seed = 7
    threads = 1
    out = "runs/demo"

    [operator]
    preset = "opapp1new"
    coupling = 10

    [energy]
    values = [0.0]

    [stages.lyapunov]
    k = 10000
    samples = 100

Every enabled stage draws randomness from its own substream
``SeedSequence(seed, spawn_key=(crc32(stage),))``, so adding, removing or
reordering stages never changes another stage's numbers.
"""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import os
import shutil
import sys
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from jsonschema import Draft202012Validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .operators import OperatorSpec, SpecError, spec_from_config

SCHEMA_VERSION = 1
OUTPUT_ENV = "QPMSA_OUTPUT_DIR"
STAGE_ORDER = ("discrepancy", "lyapunov", "ids", "localize", "modulus", "greens", "cartan", "ldt", "msa")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_HYPOTHESIS = 0, 1, 2, 3


class ConfigError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("; ".join(violations))


class HypothesisNotMet(RuntimeError):
    pass


class ReplayMismatch(RuntimeError):
    def __init__(self, stage: str, detail: str):
        self.stage = stage
        super().__init__(f"checksum mismatch in stage {stage!r}: {detail}")


# --------------------------------------------------------------------------
# schema
# --------------------------------------------------------------------------

_num = {"type": "number"}
_int = {"type": "integer"}
_pos_int = {"type": "integer", "minimum": 1}
_num_list = {"type": "array", "items": _num}
_int_list = {"type": "array", "items": _pos_int, "minItems": 1}


def _obj(props: dict, required: tuple = ()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False,
            "required": list(required)}


STAGE_SCHEMAS = {
    "discrepancy": _obj({"Ns": _int_list, "method": {"type": "string", "pattern": r"^(exact|exact_1d|grid:\d+)$"},
                         "x0": {"oneOf": [_num, _num_list]}}),
    "lyapunov": _obj({"k": {"type": "integer", "minimum": 100}, "samples": {"type": "integer", "minimum": 10}}),
    "ids": _obj({"N": _pos_int, "x": {"oneOf": [_num, _num_list]}, "n_energies": {"type": "integer", "minimum": 2},
                 "E_min": _num, "E_max": _num}),
    "localize": _obj({"N": _pos_int, "x": {"oneOf": [_num, _num_list]}}),
    "modulus": _obj({"N": _pos_int, "n_x": _pos_int, "gaps": {"type": "array", "items": _num, "minItems": 4}}),
    "greens": _obj({"N": _pos_int, "n_x": _pos_int, "c2": _num, "sigma": _num, "sigma_t": _num}),
    "cartan": _obj({"family": {"enum": ["diag_sine", "scalar"]}, "eps": _num_list, "grid": _pos_int}),
    "ldt": _obj({"Ns": _int_list, "count": _pos_int, "sampler": {"enum": ["mc", "grid"]},
                 "mu": _num, "zeta": _num, "c2": _num, "sigma_t": _num}),
    "msa": _obj({"M0": _pos_int, "rho": _num, "N": _pos_int, "sigma": _num, "sigma_t": _num,
                 "varsigma": _num, "c2_init": _num, "n_x": _pos_int, "require": _num}),
}

CONFIG_SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "seed": {"type": "integer", "minimum": 0},
    "threads": _pos_int,
    "out": {"type": "string"},
    "operator": {"type": "object", "properties": {
        "preset": {"type": "string"}, "coupling": _num, "lambda": _num,
        "omega": {"oneOf": [_num, _num_list]}, "b": _pos_int, "d": _pos_int,
        "potential": {"type": "object"}, "hopping": {"type": "object"},
        "meta": {"type": "object"}, "defects": {"type": "array"}},
        "additionalProperties": False, "required": ["preset"]},
    "energy": _obj({"values": _num_list}),
    "stages": _obj({k: v for k, v in STAGE_SCHEMAS.items()}),
}, required=("seed", "operator", "stages"))


def load_config(path: str | os.PathLike) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def validate(cfg: dict) -> list[str]:
    """Every violation at once, as 'path: message' strings; empty when valid."""
    out = []
    v = Draft202012Validator(CONFIG_SCHEMA)
    for err in sorted(v.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path))):
        path = ".".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{path}: {err.message}")
    if out:
        return out
    try:
        spec = spec_from_config(cfg["operator"])
    except (SpecError, ValueError, TypeError) as exc:
        return [f"operator: {exc}"]
    st = cfg.get("stages", {})
    if "msa" in st:
        m = st["msa"]
        s, stt, rho = m.get("sigma", 0.7), m.get("sigma_t", 1.0), m.get("rho", 1.25)
        if not (0 < s < stt <= 1):
            out.append(f"stages.msa.sigma: need 0 < sigma < sigma_t <= 1, got {s}")
        elif not (1 < rho < 1 + stt - s):
            out.append(f"stages.msa.rho: {rho} is outside the open interval (1, {1 + stt - s:g})")
        if m.get("M0", 15) > m.get("N", 500):
            out.append("stages.msa.M0: larger than N")
    if "ldt" in st:
        for key in ("mu", "zeta"):
            val = st["ldt"].get(key, 0.5)
            if not 0 < val < 1:
                out.append(f"stages.ldt.{key}: must lie in (0, 1), got {val}")
    needs_1d = {"lyapunov"} & set(st)
    if needs_1d and (spec.d != 1 or spec.hopping.kind != "laplacian"):
        out.append("stages.lyapunov: needs a 1-D nearest-neighbour operator")
    needs_sa = {"ids", "localize", "modulus"} & set(st)
    if needs_sa and not spec.self_adjoint:
        out.append(f"stages.{sorted(needs_sa)[0]}: operator is not self-adjoint")
    return out


# --------------------------------------------------------------------------
# artifacts
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return f
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def write_json(path: Path, obj) -> None:
    data = _clean(obj)
    if isinstance(data, dict):
        data = {"schema_version": SCHEMA_VERSION, **data}
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def stage_rng(seed: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(stage.encode()),)))


# --------------------------------------------------------------------------
# stages
# --------------------------------------------------------------------------

@dataclass
class StageContext:
    name: str
    cfg: dict
    spec: OperatorSpec
    energies: list
    rng: np.random.Generator
    outdir: Path

    def path(self, suffix: str) -> Path:
        return self.outdir / f"{self.name}{suffix}"


def _x_of(val, spec: OperatorSpec):
    if val is None:
        return 0.0 if spec.b == 1 else [0.0] * spec.b
    return val


def _stage_discrepancy(ctx: StageContext) -> tuple[list[Path], dict]:
    from .equidistribution import discrepancy, orbit
    c = ctx.cfg
    dyn = ctx.spec.dynamics
    x0 = c.get("x0", [0.0] * dyn.b)
    Ns = c.get("Ns", [64, 128, 256, 512])
    method = c.get("method", "exact_1d" if dyn.b == 1 else "grid:64")
    rows = []
    for N in Ns:
        st = discrepancy(orbit(dyn, x0, np.arange(N)), method)
        rows.append((N, st.D_N, st.err))
    p = ctx.path(".csv")
    write_csv(p, ["N", "D_N", "err"], rows)
    return [p], {}


def _stage_lyapunov(ctx: StageContext):
    from .spectral import lyapunov, schrodinger_form
    v, scale = schrodinger_form(ctx.spec)
    om = ctx.spec.dynamics.omega[0]
    rows = []
    for E in ctx.energies:
        L, se = lyapunov(scale * E, om, v, int(ctx.cfg.get("k", 10_000)), int(ctx.cfg.get("samples", 100)))
        rows.append((E, L, se))
    p = ctx.path(".csv")
    write_csv(p, ["E", "L", "stderr"], rows)
    return [p], {}


def _stage_ids(ctx: StageContext):
    from .spectral import ids
    c = ctx.cfg
    N = int(c.get("N", 200))
    x = _x_of(c.get("x"), ctx.spec)
    lo = c.get("E_min", -ctx.spec.potential.sup_bound() - 2.0 * ctx.spec.d / ctx.spec.coupling - 0.5)
    hi = c.get("E_max", -lo)
    E = np.linspace(lo, hi, int(c.get("n_energies", 401)))
    curve = ids(ctx.spec, x, N, E)
    p = ctx.path(".csv")
    write_csv(p, ["E", "k"], curve.rows())
    return [p], {}


def _stage_localize(ctx: StageContext):
    from .spectral import localization_profiles, median_rate
    c = ctx.cfg
    prof = localization_profiles(ctx.spec, _x_of(c.get("x"), ctx.spec), int(c.get("N", 300)))
    p = ctx.path(".csv")
    write_csv(p, ["eigenvalue", "peak", "rate", "mass", "r"],
              [(q.eigenvalue, q.peak, q.rate, q.mass, q.r) for q in prof])
    return [p], {"median_rate": median_rate(prof)}


def _stage_modulus(ctx: StageContext):
    from .spectral import ids_modulus
    c = ctx.cfg
    xs = ctx.rng.random(int(c.get("n_x", 4)))
    if ctx.spec.b > 1:
        xs = ctx.rng.random((len(xs), ctx.spec.b))
    fit = ids_modulus(ctx.spec, xs, int(c.get("N", 200)), c.get("gaps", [1e-1, 1e-2, 1e-3, 1e-4]))
    p = ctx.path(".csv")
    write_csv(p, ["gap", "count", "censored"], zip(fit.gaps, fit.counts, fit.censored))
    return [p], {"tau": fit.tau, "residual": fit.residual}


def _stage_greens(ctx: StageContext):
    from .greens import classify, greens
    from .lattice import cube
    from .operators import assemble
    c = ctx.cfg
    N = int(c.get("N", 60))
    R = cube(np.zeros(ctx.spec.d, dtype=np.int64), N)
    rows = []
    for _ in range(int(c.get("n_x", 50))):
        x = ctx.rng.random(ctx.spec.b)
        xv = float(x[0]) if ctx.spec.b == 1 else x
        for E in ctx.energies:
            g = greens(assemble(ctx.spec, xv, E, R), sigma_t=c.get("sigma_t", 1.0))
            cl = classify(g, N, c.get("sigma", 0.5), c.get("sigma_t", 1.0), c.get("c2", 0.5))
            rows.append((";".join(_fmt(v) for v in np.atleast_1d(x)), E, g.op_norm, g.decay_fit.rate,
                         cl.is_G, cl.is_SG))
    p = ctx.path(".csv")
    write_csv(p, ["x", "E", "norm", "fitted_rate", "is_G", "is_SG"], rows)
    return [p], {"is_SG_fraction": float(np.mean([r[5] for r in rows]))}


def _stage_cartan(ctx: StageContext):
    from .cartan import cartan_measure, diag_sine_family, scalar_family
    c = ctx.cfg
    fam = diag_sine_family() if c.get("family", "diag_sine") == "diag_sine" else scalar_family()
    eps = c.get("eps", [10.0 ** -k for k in range(2, 9)])
    res = cartan_measure(fam, eps, c.get("grid"))
    p = ctx.path(".csv")
    write_csv(p, ["eps", "measure", "bound_rhs"], res.rows(fam))
    return [p], {"fitted_c": res.fitted_c, "monotone": res.monotone, "mc3_ok": res.mc3_ok}


def _stage_ldt(ctx: StageContext):
    from .ldt import PropertyPParams, Sampler, measure_bad_set
    c = ctx.cfg
    params = PropertyPParams(c.get("mu", 0.5), c.get("zeta", 0.5), c.get("c2", 0.5), c.get("sigma_t", 1.0))
    seed = int(ctx.rng.integers(2 ** 63))
    smp = Sampler(c.get("sampler", "mc"), int(c.get("count", 200)), seed)
    E = ctx.energies[0]
    ests = [measure_bad_set(ctx.spec, E, int(N), params, smp) for N in c.get("Ns", [20, 40])]
    p = ctx.path(".json")
    write_json(p, {"E": E, "params": vars(params), "sampler": vars(smp), "estimates": [e.to_json() for e in ests]})
    return [p], {"fractions": [e.fraction for e in ests]}


def _stage_msa(ctx: StageContext):
    from .msa import default_c2, run_induction, schedule
    c = ctx.cfg
    sched = schedule(int(c.get("M0", 15)), float(c.get("rho", 1.25)), int(c.get("N", 500)),
                     float(c.get("sigma", 0.7)), float(c.get("sigma_t", 1.0)))
    c2 = float(c.get("c2_init", default_c2(ctx.spec.coupling)))
    runs = []
    E = ctx.energies[0]
    for _ in range(int(c.get("n_x", 5))):
        x = ctx.rng.random(ctx.spec.b)
        sub = np.random.default_rng(ctx.rng.integers(2 ** 63))
        r = run_induction(ctx.spec, float(x[0]) if ctx.spec.b == 1 else x, E, sched, c2,
                          float(c.get("varsigma", 0.9)), seed=None, rng=sub)
        runs.append(r.to_json())
    met = sum(r["hypotheses_ok"] for r in runs) / len(runs)
    p = ctx.outdir / "report.json"
    write_json(p, {"scales": list(sched.scales), "c2_init": c2, "E": E,
                   "hypotheses_met_fraction": met, "runs": runs})
    status = {"hypotheses_met_fraction": met}
    if met < float(c.get("require", 0.5)):
        status["hypothesis_failure"] = True
    return [p], status


STAGES: dict[str, Callable[[StageContext], tuple[list[Path], dict]]] = {
    "discrepancy": _stage_discrepancy, "lyapunov": _stage_lyapunov, "ids": _stage_ids,
    "localize": _stage_localize, "modulus": _stage_modulus, "greens": _stage_greens,
    "cartan": _stage_cartan, "ldt": _stage_ldt, "msa": _stage_msa,
}


# --------------------------------------------------------------------------
# run / replay
# --------------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    code_version: str
    seed: int
    started: float
    finished: float
    stages: dict          # name -> {"artifacts": {relpath: sha256}, "status": {...}}
    exit_code: int
    path: Path | None = None

    def to_json(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, "config": self.config, "code_version": self.code_version,
                "seed": self.seed, "started": self.started, "finished": self.finished,
                "stages": self.stages, "exit_code": self.exit_code}

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RunManifest":
        obj = json.loads(Path(path).read_text())
        return cls(obj["config"], obj["code_version"], obj["seed"], obj["started"], obj["finished"],
                   obj["stages"], obj["exit_code"], Path(path))


def output_dir(cfg: dict, override: str | os.PathLike | None = None) -> Path:
    if override is not None:
        return Path(override)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.get("out", "runs/default"))


def run(cfg: dict, out: str | os.PathLike | None = None, threads: int | None = None) -> RunManifest:
    """Validate, execute the enabled stages and write artifacts plus manifest.json."""
    problems = validate(cfg)
    if problems:
        raise ConfigError(problems)
    cfg = copy.deepcopy(cfg)
    outdir = output_dir(cfg, out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = spec_from_config(cfg["operator"])
    energies = [float(e) for e in cfg.get("energy", {}).get("values", [0.0])]
    seed = int(cfg["seed"])
    names = [s for s in STAGE_ORDER if s in cfg["stages"]]
    nthreads = int(threads or cfg.get("threads") or os.cpu_count() or 1)
    started = time.time()

    def one(name):
        ctx = StageContext(name, cfg["stages"][name], spec, energies, stage_rng(seed, name), outdir)
        paths, status = STAGES[name](ctx)
        return name, {"artifacts": {p.name: sha256_file(p) for p in paths}, "status": _clean(status)}

    with ThreadPoolExecutor(max_workers=max(1, nthreads)) as pool:
        results = dict(pool.map(one, names))
    stages = {n: results[n] for n in names}
    code = EXIT_HYPOTHESIS if any(s["status"].get("hypothesis_failure") for s in stages.values()) else EXIT_OK
    man = RunManifest(cfg, __version__, seed, started, time.time(), stages, code, outdir / "manifest.json")
    write_json(man.path, man.to_json())
    return man


@dataclass
class ReplayReport:
    manifest: RunManifest
    replayed: RunManifest
    identical: bool


def replay(manifest_path: str | os.PathLike, out: str | os.PathLike | None = None,
           config_override: dict | None = None) -> ReplayReport:
    """Re-run a manifest's config and compare checksums stage by stage (in stage order)."""
    man = RunManifest.load(manifest_path)
    cfg = copy.deepcopy(config_override if config_override is not None else man.config)
    target = Path(out) if out is not None else Path(manifest_path).parent.with_name(Path(manifest_path).parent.name + ".replay")
    if target.exists():
        shutil.rmtree(target)
    new = run(cfg, target)
    for name in STAGE_ORDER:
        if name not in man.stages and name not in new.stages:
            continue
        a = man.stages.get(name, {}).get("artifacts")
        b = new.stages.get(name, {}).get("artifacts")
        if a != b:
            raise ReplayMismatch(name, f"recorded {a} vs replayed {b}")
    return ReplayReport(man, new, True)
