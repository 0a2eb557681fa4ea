"""Quasi-periodic Toeplitz operator families and their finite-volume matrices.

An operator is described by an :class:`OperatorSpec` (hopping, potential,
dynamics, coupling).  :func:`assemble` restricts A(x) - E to a lattice region
and returns a dense matrix in the region's canonical point order.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from .equidistribution import DynamicsSpec, golden, orbit
from .lattice import LatticeRegion, rectangle

TRUNCATION_LOG = 40.0       # kernel entries below e^-40 are dropped
DEFAULT_CAP = 20_000


class SpecError(ValueError):
    pass


class SizeError(ValueError):
    pass


# --------------------------------------------------------------------------
# potential
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """v(x) = c0 + sum_t a_t trig_t(2 pi m_t . x) on T^b.

    ``terms`` holds (kind, a, m) with kind in {"cos", "sin"} and m an integer
    frequency vector.  With ``project`` set, v is a function on T^1 evaluated
    at that coordinate of x (the projection P_b).
    """
    terms: tuple = (("cos", 2.0, (1,)),)
    constant: float = 0.0
    project: int | None = None

    @classmethod
    def cosine(cls, amp: float = 2.0, b: int = 1) -> "PotentialSpec":
        terms = tuple(("cos", float(amp), tuple(int(i == j) for j in range(b))) for i in range(b))
        return cls(terms)

    def sup_bound(self) -> float:
        return abs(self.constant) + sum(abs(a) for _, a, _ in self.terms)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if self.project is not None:
            x = x[:, [self.project]]
        out = np.full(len(x), float(self.constant))
        for kind, a, m in self.terms:
            m = np.asarray(m, dtype=np.float64)
            if len(m) != x.shape[1]:
                raise SpecError(f"potential frequency {tuple(m)} does not match torus dimension {x.shape[1]}")
            arg = 2.0 * np.pi * (x @ m)
            out += a * (np.cos(arg) if kind == "cos" else np.sin(arg))
        return out

    def to_json(self) -> dict:
        return {"terms": [[k, a, list(m)] for k, a, m in self.terms],
                "constant": self.constant, "project": self.project}

    @classmethod
    def from_json(cls, obj: dict) -> "PotentialSpec":
        terms = tuple((str(k), float(a), tuple(int(v) for v in m)) for k, a, m in obj.get("terms", []))
        proj = obj.get("project")
        return cls(terms, float(obj.get("constant", 0.0)), None if proj is None else int(proj))


# --------------------------------------------------------------------------
# hopping
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HoppingSpec:
    """Off-diagonal part S of the operator.

    kind="laplacian": 1 on l1-nearest neighbours.
    kind="kernel": S(m) from ``table`` (offset -> value), otherwise
        tail * K e^{-c1 |m|^sigma_t} for m != 0, truncated below e^-40.
    kind="phase_modulated": S(x; n, n') = phi_{n-n'}(f(n,x)) + conj phi_{n'-n}(f(n',x))
        with phi_k given in ``phases`` as k -> [(coeff, freq), ...].
    """
    kind: str = "laplacian"
    K: float = math.e
    c1: float = 1.0
    sigma_t: float = 1.0
    table: tuple = ()          # ((offset tuple, value), ...)
    tail: float = 0.0
    phases: tuple = ()         # ((k tuple, ((coeff, freq tuple), ...)), ...)

    def __post_init__(self):
        if self.kind not in ("laplacian", "kernel", "phase_modulated"):
            raise SpecError(f"unknown hopping kind {self.kind!r}")

    def envelope(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.float64)
        return self.K * np.exp(-self.c1 * r ** self.sigma_t)

    def truncation_radius(self) -> int:
        if self.kind == "laplacian":
            return 1
        radii = [max(np.abs(np.asarray(m)).max(), 0) for m, _ in self.table]
        radii += [max(np.abs(np.asarray(k)).max(), 0) for k, _ in self.phases]
        r = max(radii) if radii else 0
        if self.kind == "kernel" and self.tail > 0:
            # tail * K e^{-c1 r^s} < e^{-40}
            r_tail = ((TRUNCATION_LOG + math.log(self.tail * self.K)) / self.c1) ** (1.0 / self.sigma_t)
            r = max(r, int(math.floor(r_tail)))
        return int(r)

    def offsets(self, d: int) -> np.ndarray:
        """Nonzero offsets m in the support of S."""
        if self.kind == "laplacian":
            eye = np.eye(d, dtype=np.int64)
            return np.concatenate([eye, -eye])
        if self.kind == "phase_modulated":
            ks = {tuple(k) for k, _ in self.phases}
            ks |= {tuple(-v for v in k) for k in ks}
            ks.discard((0,) * d)
            return np.array(sorted(ks), dtype=np.int64).reshape(-1, d)
        R = self.truncation_radius()
        box = rectangle([-R] * d, [R] * d)
        keep = np.abs(box).max(axis=1) > 0
        return box[keep]

    def kernel_value(self, m: np.ndarray) -> np.ndarray:
        """Translation-invariant kernel values for offsets m (kernel/laplacian)."""
        m = np.atleast_2d(m)
        r = np.abs(m).max(axis=1)
        if self.kind == "laplacian":
            return (np.abs(m).sum(axis=1) == 1).astype(np.float64)
        tab = {tuple(int(v) for v in k): val for k, val in self.table}
        out = np.where(r > 0, self.tail * self.envelope(r), 0.0).astype(np.complex128)
        out[out.real < math.exp(-TRUNCATION_LOG)] = 0.0
        for i, mm in enumerate(map(tuple, m.tolist())):
            if mm in tab:
                out[i] = tab[mm]
        if np.all(out.imag == 0):
            return out.real
        return out

    def phi(self, k: tuple, x: np.ndarray) -> np.ndarray:
        """phi_k at torus points x, shape (P,)."""
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(len(x), dtype=np.complex128)
        for kk, poly in self.phases:
            if tuple(kk) == tuple(k):
                for coeff, freq in poly:
                    f = np.asarray(freq, dtype=np.float64)
                    out += complex(coeff) * np.exp(2j * np.pi * (x @ f))
        return out

    @property
    def self_adjoint(self) -> bool:
        if self.kind in ("laplacian", "phase_modulated"):
            return True
        if not self.table:
            return True
        offs = np.array([k for k, _ in self.table], dtype=np.int64)
        return bool(np.allclose(self.kernel_value(offs), np.conj(self.kernel_value(-offs)), rtol=0, atol=1e-15))

    def to_json(self) -> dict:
        return {"kind": self.kind, "K": self.K, "c1": self.c1, "sigma_t": self.sigma_t,
                "table": [[list(k), _cjson(v)] for k, v in self.table],
                "tail": self.tail,
                "phases": [[list(k), [[_cjson(c), list(f)] for c, f in poly]] for k, poly in self.phases]}

    @classmethod
    def from_json(cls, obj: dict) -> "HoppingSpec":
        table = tuple((tuple(int(v) for v in k), _cload(val)) for k, val in obj.get("table", []))
        phases = tuple((tuple(int(v) for v in k), tuple((_cload(c), tuple(int(v) for v in f)) for c, f in poly))
                       for k, poly in obj.get("phases", []))
        return cls(obj.get("kind", "laplacian"), float(obj.get("K", math.e)), float(obj.get("c1", 1.0)),
                   float(obj.get("sigma_t", 1.0)), table, float(obj.get("tail", 0.0)), phases)


def _cjson(v):
    v = complex(v)
    return v.real if v.imag == 0 else [v.real, v.imag]


def _cload(v):
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return float(v)


# --------------------------------------------------------------------------
# operator spec and presets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    name: str
    hopping: HoppingSpec
    potential: PotentialSpec
    dynamics: DynamicsSpec
    coupling: float = 1.0                    # lambda; hopping is scaled by 1/lambda
    meta: tuple = ()                         # (key, value) pairs: rho, gamma, K1, ...
    defects: tuple = ()                      # ((site tuple, extra potential), ...)

    @property
    def d(self) -> int:
        return self.dynamics.d

    @property
    def b(self) -> int:
        return self.dynamics.b

    @property
    def self_adjoint(self) -> bool:
        return self.hopping.self_adjoint

    @property
    def covariant(self) -> bool:
        return len(self.defects) == 0

    def with_(self, **kw) -> "OperatorSpec":
        return replace(self, **kw)

    def to_json(self) -> dict:
        lam = self.coupling
        return {"name": self.name, "hopping": self.hopping.to_json(),
                "potential": self.potential.to_json(), "dynamics": self.dynamics.to_json(),
                "coupling": "inf" if math.isinf(lam) else lam,
                "meta": {k: v for k, v in self.meta},
                "defects": [[list(s), v] for s, v in self.defects]}

    @classmethod
    def from_json(cls, obj: dict) -> "OperatorSpec":
        lam = obj.get("coupling", 1.0)
        return cls(obj.get("name", "custom"), HoppingSpec.from_json(obj["hopping"]),
                   PotentialSpec.from_json(obj["potential"]), DynamicsSpec.from_json(obj["dynamics"]),
                   float(lam), tuple(sorted(obj.get("meta", {}).items())),
                   tuple((tuple(s), float(v)) for s, v in obj.get("defects", [])))

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _long_range(K: float = 1.0, c1: float = 1.0) -> HoppingSpec:
    return HoppingSpec("kernel", K=K, c1=c1, sigma_t=1.0, tail=1.0)


def _example4(K: float = 1.0, c1: float = 1.0, b: int = 1, reach: int = 3, d: int = 1) -> HoppingSpec:
    """phi_k(x) = (K e^{-c1|k|}/2) (1 + e^{2 pi i x_1})/2 for 1 <= |k| <= reach."""
    phases = []
    e1 = tuple(int(i == 0) for i in range(b))
    for k in rectangle([-reach] * d, [reach] * d):
        r = int(np.abs(k).max())
        if r == 0:
            continue
        a = K * math.exp(-c1 * r) / 2.0
        phases.append((tuple(int(v) for v in k), ((a / 2.0, (0,) * b), (a / 2.0, e1))))
    return HoppingSpec("phase_modulated", K=K, c1=c1, sigma_t=1.0, phases=tuple(phases))


PRESETS = ("opapp1", "opapp1new", "opapp2", "opapp4", "opapp5", "opapp6", "opapp7")


def preset(name: str, *, coupling: float | None = None, omega=None, b: int | None = None,
           d: int | None = None, potential: PotentialSpec | None = None,
           hopping: HoppingSpec | None = None) -> OperatorSpec:
    """Named operator families with desk-scale defaults."""
    g = golden()
    if name == "opapp1":
        bb = b or 1
        om = omega if omega is not None else _default_freqs(bb)
        dyn = DynamicsSpec("shift", tuple(np.atleast_1d(om)))
        pot = potential or PotentialSpec.cosine(2.0, dyn.b)
        return OperatorSpec(name, hopping or HoppingSpec("laplacian"), pot, dyn, 1.0 if coupling is None else coupling)
    if name == "opapp1new":
        bb = b or 1
        om = omega if omega is not None else _default_freqs(bb)
        dyn = DynamicsSpec("shift", tuple(np.atleast_1d(om)))
        pot = potential or PotentialSpec.cosine(2.0, dyn.b)
        return OperatorSpec(name, hopping or HoppingSpec("laplacian"), pot, dyn, 10.0 if coupling is None else coupling)
    if name == "opapp2":
        bb = b or 1
        om = omega if omega is not None else _default_freqs(bb)
        dyn = DynamicsSpec("shift", tuple(np.atleast_1d(om)))
        pot = potential or PotentialSpec.cosine(2.0, dyn.b)
        return OperatorSpec(name, hopping or _long_range(), pot, dyn, 10.0 if coupling is None else coupling)
    if name == "opapp4":
        dd = d or 2
        om = omega if omega is not None else _default_freqs(dd)
        dyn = DynamicsSpec("multi_shift", tuple(np.atleast_1d(om)))
        pot = potential or PotentialSpec.cosine(2.0, 1)
        return OperatorSpec(name, hopping or _long_range(), pot, dyn, 10.0 if coupling is None else coupling)
    if name == "opapp5":
        bb = b or 2
        dyn = DynamicsSpec("skew_shift", (g if omega is None else float(np.atleast_1d(omega)[0]),), b=bb)
        pot = potential or PotentialSpec.cosine(2.0, bb)
        return OperatorSpec(name, hopping or _example4(b=bb), pot, dyn, 10.0 if coupling is None else coupling)
    if name == "opapp6":
        om = omega if omega is not None else _default_freqs(2)
        dyn = DynamicsSpec("product_shift", tuple(np.atleast_1d(om)))
        pot = potential or PotentialSpec.cosine(2.0, 2)
        return OperatorSpec(name, hopping or _long_range(), pot, dyn, 10.0 if coupling is None else coupling)
    if name == "opapp7":
        bb = b or 2
        dyn = DynamicsSpec("skew_shift", (g if omega is None else float(np.atleast_1d(omega)[0]),), b=bb)
        pot = potential or PotentialSpec((("cos", 2.0, (1,)),), project=bb - 1)
        return OperatorSpec(name, hopping or HoppingSpec("laplacian"), pot, dyn, 10.0 if coupling is None else coupling)
    raise SpecError(f"unknown preset {name!r}")


def _default_freqs(b: int) -> tuple:
    base = [golden(), math.sqrt(2) - 1, math.sqrt(3) - 1, math.sqrt(5) - 2]
    if b > len(base):
        raise SpecError("no default frequency vector beyond b = 4")
    return tuple(base[:b])


def amo(lam: float, omega: float | None = None) -> OperatorSpec:
    """Almost Mathieu operator Delta + 2 lam cos(2 pi (x + n omega))."""
    om = golden() if omega is None else omega
    return OperatorSpec("amo", HoppingSpec("laplacian"), PotentialSpec((("cos", 2.0 * lam, (1,)),)),
                        DynamicsSpec("shift", (om,)), 1.0)


def spec_from_config(cfg: dict[str, Any]) -> OperatorSpec:
    """Build a spec from a key-value tree (e.g. parsed TOML).

    Recognised keys: preset, coupling (or lambda), omega, b, d, potential,
    hopping, meta, defects.  A full serialised spec (with 'hopping',
    'potential' and 'dynamics') is also accepted.
    """
    if "dynamics" in cfg:
        return OperatorSpec.from_json(cfg)
    name = cfg.get("preset")
    if name is None:
        raise SpecError("operator config needs a 'preset' or a full serialised spec")
    lam = cfg.get("coupling", cfg.get("lambda"))
    pot = PotentialSpec.from_json(cfg["potential"]) if "potential" in cfg else None
    hop = HoppingSpec.from_json(cfg["hopping"]) if "hopping" in cfg else None
    spec = preset(name, coupling=None if lam is None else float(lam), omega=cfg.get("omega"),
                  b=cfg.get("b"), d=cfg.get("d"), potential=pot, hopping=hop)
    if "meta" in cfg:
        spec = spec.with_(meta=tuple(sorted(cfg["meta"].items())))
    if "defects" in cfg:
        spec = spec.with_(defects=tuple((tuple(s), float(v)) for s, v in cfg["defects"]))
    return spec


# --------------------------------------------------------------------------
# assembly
# --------------------------------------------------------------------------

@dataclass
class RegionMatrix:
    region: LatticeRegion
    x: tuple
    E: float
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.entries.shape[0]


def phases_at(spec: OperatorSpec, x, points: np.ndarray) -> np.ndarray:
    pts = points[:, 0] if spec.d == 1 else points
    return orbit(spec.dynamics, x, pts)


def hopping_matrix(spec: OperatorSpec, x, region: LatticeRegion, phases: np.ndarray | None = None) -> np.ndarray:
    """S restricted to the region (without the 1/lambda factor)."""
    pts = region.points
    P, d = pts.shape
    hop = spec.hopping
    offs = hop.offsets(d)
    is_complex = hop.kind == "phase_modulated" or any(isinstance(v, complex) and v.imag for _, v in hop.table)
    S = np.zeros((P, P), dtype=np.complex128 if is_complex else np.float64)
    if len(offs) == 0 or P == 0:
        return S
    if hop.kind == "phase_modulated" and phases is None:
        phases = phases_at(spec, x, pts)
    vals = hop.kernel_value(offs) if hop.kind != "phase_modulated" else None
    for t, m in enumerate(offs):
        j = region.index_of(pts - m)   # n_j = n_i - m, so n_i - n_j = m
        i = np.nonzero(j >= 0)[0]
        if len(i) == 0:
            continue
        j = j[i]
        if hop.kind == "phase_modulated":
            mt = tuple(int(v) for v in m)
            mneg = tuple(-v for v in mt)
            S[i, j] = hop.phi(mt, phases[i]) + np.conj(hop.phi(mneg, phases[j]))
        else:
            if vals[t] != 0:
                S[i, j] = vals[t]
    return S


def assemble(spec: OperatorSpec, x, E: float, region: LatticeRegion, cap: int = DEFAULT_CAP) -> RegionMatrix:
    P = len(region)
    if P > cap:
        raise SizeError(f"region has {P} points, cap is {cap}")
    pts = region.points
    if pts.shape[1] != spec.d:
        raise SpecError(f"region dimension {pts.shape[1]} != lattice dimension {spec.d}")
    ph = phases_at(spec, x, pts)
    diag = spec.potential(ph)
    if spec.defects:
        extra = np.zeros(P)
        idx = region.index_of(np.array([s for s, _ in spec.defects], dtype=np.int64).reshape(-1, spec.d))
        for k, (_, v) in zip(idx, spec.defects):
            if k >= 0:
                extra[k] += v
        diag = diag + extra
    if not np.all(np.isfinite(diag)):
        raise SpecError("potential evaluation is not finite")
    lam = float(spec.coupling)
    if math.isinf(lam):
        A = np.zeros((P, P))
    else:
        A = hopping_matrix(spec, x, region, ph) / lam
    A = A.astype(np.result_type(A.dtype, np.float64), copy=False)
    A[np.diag_indices(P)] += diag - E
    meta = {"spec_hash": spec.spec_hash(), "truncation_radius": spec.hopping.truncation_radius(),
            "truncation_log": TRUNCATION_LOG}
    x_t = tuple(float(v) for v in np.atleast_1d(x))
    return RegionMatrix(region, x_t, float(E), A, meta)


def shift_point(spec: OperatorSpec, x, k) -> np.ndarray:
    """f^k(x) as floats."""
    kk = np.asarray(k, dtype=np.int64).reshape(1, -1) if spec.d > 1 else np.asarray([k], dtype=np.int64).reshape(-1)
    return orbit(spec.dynamics, x, kk)[0]


def covariance_residual(spec: OperatorSpec, x, k, region: LatticeRegion, E: float = 0.0) -> float:
    """max |A(x; n+k, n'+k) - A(f^k x; n, n')| over the region."""
    k = np.asarray(k, dtype=np.int64).reshape(-1)
    moved = LatticeRegion.explicit(region.points + k)
    A1 = assemble(spec, x, E, moved).entries
    A2 = assemble(spec, shift_point(spec, x, k if spec.d > 1 else int(k[0])), E, region).entries
    return float(np.max(np.abs(A1 - A2))) if A1.size else 0.0


@dataclass
class EnvelopeReport:
    worst_ratio: float
    required_K: float
    worst_offset: tuple
    samples: int


def decay_envelope_check(spec: OperatorSpec, samples: int = 2000, rng: np.random.Generator | None = None,
                         box: int = 50) -> EnvelopeReport:
    """Monte Carlo of |S(x; n, n')| / (K e^{-c1 |n-n'|^s}) over off-diagonal pairs."""
    rng = np.random.default_rng(0) if rng is None else rng
    hop = spec.hopping
    d, b = spec.d, spec.b
    offs = hop.offsets(d)
    if len(offs) == 0:
        return EnvelopeReport(0.0, 0.0, (), samples)
    m = offs[rng.integers(0, len(offs), samples)]
    n = rng.integers(-box, box + 1, size=(samples, d))
    xs = rng.random((samples, b))
    r = np.abs(m).max(axis=1)
    if hop.kind == "phase_modulated":
        vals = np.empty(samples)
        for s in range(samples):
            ph = orbit(spec.dynamics, xs[s], (np.stack([n[s], n[s] - m[s]]) if d > 1 else np.array([n[s, 0], n[s, 0] - m[s, 0]])))
            mt = tuple(int(v) for v in m[s])
            v = hop.phi(mt, ph[:1]) + np.conj(hop.phi(tuple(-q for q in mt), ph[1:]))
            vals[s] = abs(v[0])
    else:
        vals = np.abs(hop.kernel_value(m))
    env = hop.envelope(r)
    ratio = vals / env
    i = int(np.argmax(ratio))
    required = float(np.max(vals * np.exp(hop.c1 * r.astype(float) ** hop.sigma_t)))
    return EnvelopeReport(float(ratio[i]), required, tuple(int(v) for v in m[i]), samples)


def dump_csv(rm: RegionMatrix, fh) -> None:
    A = rm.entries
    if np.iscomplexobj(A):
        for row in A:
            fh.write(",".join(f"{v.real:.17g}{v.imag:+.17g}j" for v in row) + "\n")
    else:
        for row in A:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
