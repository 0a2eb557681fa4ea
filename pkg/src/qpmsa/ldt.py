"""Sampled large-deviation estimates for the bad set X_N of phases."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import binomtest

from .equidistribution import BoxUnion, box_indices, count_hits, orbit
from .greens import c2_cap, classify, greens
from .lattice import enumerate_elementary_shapes, translate
from .operators import OperatorSpec, assemble

SECTIONS_DEFAULT = 16


@dataclass(frozen=True)
class PropertyPParams:
    mu: float            # norm exponent: ||G|| <= e^{N^mu}
    zeta: float          # measure exponent: Leb(X_N) <= e^{-N^zeta}
    c2: float            # decay rate
    sigma_t: float = 1.0

    def validate(self, c1: float | None = None) -> None:
        if not (0 < self.mu < 1 and 0 < self.zeta < 1):
            raise ValueError("need 0 < mu, zeta < 1")
        if self.c2 <= 0:
            raise ValueError("c2 must be positive")
        if c1 is not None and self.c2 > c2_cap(c1, self.sigma_t) * (1 + 1e-12):
            raise ValueError("c2 exceeds (1 - 5^-s) c1")


@dataclass(frozen=True)
class Sampler:
    """Either a uniform grid of ``count`` cell centres or ``count`` Monte Carlo draws."""
    kind: str = "mc"          # "grid" | "mc"
    count: int = 2000
    seed: int = 0
    sections: int = SECTIONS_DEFAULT

    def points(self, rng: np.random.Generator | None = None) -> np.ndarray:
        if self.kind == "grid":
            return (np.arange(self.count) + 0.5) / self.count
        if self.kind == "mc":
            rng = np.random.default_rng(self.seed) if rng is None else rng
            return rng.random(self.count)
        raise ValueError(f"unknown sampler {self.kind!r}")


@dataclass
class LdtEstimate:
    N: int
    n_samples: int
    n_bad: int
    fraction: float
    ci: tuple
    cover: BoxUnion
    h: float
    section: tuple = ()                 # worst section x_i^neg when b >= 2
    samples: dict = field(default_factory=dict, repr=False)

    @property
    def stderr(self) -> float:
        p = self.fraction
        return math.sqrt(max(p * (1 - p), 0.0) / max(self.n_samples, 1))

    def to_json(self) -> dict:
        return {"N": self.N, "n_samples": self.n_samples, "n_bad": self.n_bad, "fraction": self.fraction,
                "ci": list(self.ci), "h": self.h, "section": list(self.section),
                "cover_measure": self.cover.measure(), "cover": [[list(lo), list(hi)] for lo, hi in self.cover.boxes()]}


def voronoi_cells(xs: np.ndarray) -> np.ndarray:
    """Circle cells of 1-D samples: (lo, hi) halfway to each neighbour, hi may exceed 1."""
    xs = np.asarray(xs, dtype=np.float64)
    n = len(xs)
    if n == 1:
        return np.array([[xs[0] - 0.5, xs[0] + 0.5]])
    order = np.argsort(xs, kind="stable")
    s = xs[order]
    nxt = np.roll(s, -1)
    nxt[-1] += 1.0
    mid = (s + nxt) / 2              # boundary between s[i] and s[i+1]
    lo = np.roll(mid, 1)
    lo[0] -= 1.0
    cells = np.empty((n, 2))
    cells[order, 0] = lo
    cells[order, 1] = mid
    return cells


def _wrap(lo: float, hi: float) -> list:
    lo0 = lo - math.floor(lo)
    hi0 = lo0 + (hi - lo)
    if hi0 <= 1.0:
        return [(lo0, hi0)]
    return [(lo0, 1.0), (0.0, hi0 - 1.0)]


def make_cover(cells_1d: np.ndarray, sections: Sequence[tuple], section_width: float, b: int) -> BoxUnion:
    """Union of (x1-cell) x (section cell) boxes, split at the torus seam."""
    boxes = []
    for (lo, hi), sec in zip(cells_1d, sections):
        rest = [[(s - section_width / 2, s + section_width / 2)] for s in sec]
        for piece in _wrap(lo, hi):
            for combo in itertools.product([piece], *rest):
                boxes.append((np.array([a for a, _ in combo]), np.array([c for _, c in combo])))
    return BoxUnion(boxes, b=b)


def sample_status(spec: OperatorSpec, x, E: float, N: int, params: PropertyPParams) -> tuple[bool, float, float]:
    """(bad, log ||G||, worst fitted rate over shapes) at one phase; bad iff some shape fails."""
    d = spec.d
    bad = False
    lnorm, rate = -math.inf, math.inf
    for shp in enumerate_elementary_shapes(d, N):
        R = translate(shp, np.zeros(d, dtype=np.int64))
        g = greens(assemble(spec, x, E, R), sigma_t=params.sigma_t)
        cl = classify(g, N, params.mu, params.sigma_t, params.c2)
        lnorm = max(lnorm, g.log_norm())
        rate = min(rate, g.decay_fit.rate)
        bad |= not cl.is_SG
    return bad, lnorm, rate


def measure_bad_set(spec: OperatorSpec, E: float, N: int, params: PropertyPParams,
                    sampler: Sampler = Sampler()) -> LdtEstimate:
    """Fraction of sampled phases whose size-N elementary regions are not all
    strongly good; for b >= 2 the worst of ``sampler.sections`` sections."""
    b = spec.b
    rng = np.random.default_rng(sampler.seed)
    xs1 = sampler.points(rng)
    if b == 1:
        sections = [()]
    else:
        ax = (np.arange(sampler.sections) + 0.5) / sampler.sections
        sections = list(itertools.product(ax, repeat=b - 1))
    best = None
    cells = voronoi_cells(xs1)
    cover_cells, cover_secs = [], []
    for sec in sections:
        pts = xs1[:, None] if b == 1 else np.column_stack([xs1] + [np.full(len(xs1), s) for s in sec])
        flags, lnorms, rates = [], [], []
        for x in pts:
            bad, ln, r = sample_status(spec, x if b > 1 else x[0], E, N, params)
            flags.append(bad)
            lnorms.append(ln)
            rates.append(r)
        flags = np.asarray(flags)
        cover_cells.extend(cells[flags])
        cover_secs.extend([sec] * int(flags.sum()))
        k = int(flags.sum())
        if best is None or k > best[0]:
            best = (k, sec, {"x": pts[:, 0].tolist(), "bad": flags.tolist(),
                             "log_norm": lnorms, "rate": rates})
    k, sec, samples = best
    n = len(xs1)
    ci = binomtest(k, n).proportion_ci(confidence_level=0.95, method="wilson")
    h = float(np.max(cells[:, 1] - cells[:, 0]))
    cover = make_cover(np.asarray(cover_cells).reshape(-1, 2), cover_secs,
                       1.0 / sampler.sections, b)
    return LdtEstimate(N, n, k, k / n, (float(ci.low), float(ci.high)), cover, h,
                       tuple(float(s) for s in sec), samples)


# --------------------------------------------------------------------------
# exponents
# --------------------------------------------------------------------------

def target_exponent(sigma: float, b: int, kappa: float, skew: bool = False) -> float:
    """(sigma-1)/(b^2 kappa) + 1/(b^3 kappa^2) for shifts; with ``skew`` the
    factors 2^{b-1} and 4^{b-1} enter the two denominators."""
    if skew:
        return (sigma - 1) / (2 ** (b - 1) * b ** 2 * kappa) + 1 / (4 ** (b - 1) * b ** 3 * kappa ** 2)
    return (sigma - 1) / (b ** 2 * kappa) + 1 / (b ** 3 * kappa ** 2)


@dataclass
class ZetaFit:
    zeta: float
    residual: float
    Ns: list
    fractions: list
    censored: list
    target: float | None = None

    def line(self) -> str:
        t = "n/a" if self.target is None else f"{self.target:.6g}"
        return f"zeta_hat={self.zeta:.4f} (residual {self.residual:.3g})  target exponent={t}  [desk scale, informational]"


class CensoredError(ValueError):
    pass


def fit_zeta_from(estimates: Sequence[LdtEstimate], target: float | None = None) -> ZetaFit:
    """Regress log(-log fraction) on log N; zero fractions are censored."""
    Ns = [e.N for e in estimates]
    fr = [e.fraction for e in estimates]
    cens = [not (0 < f < 1) for f in fr]
    use = [(n, f) for n, f, c in zip(Ns, fr, cens) if not c]
    if len(use) < 2:
        raise CensoredError("fewer than two scales with a non-degenerate bad fraction")
    X = np.log([n for n, _ in use])
    Y = np.log([-math.log(f) for _, f in use])
    coef = np.polyfit(X, Y, 1)
    res = float(np.sqrt(np.mean((np.polyval(coef, X) - Y) ** 2)))
    return ZetaFit(float(coef[0]), res, Ns, fr, cens, target)


def fit_zeta(spec: OperatorSpec, E: float, params: PropertyPParams, Ns: Sequence[int],
             sampler: Sampler = Sampler(), sigma: float | None = None, kappa: float = 1.0) -> ZetaFit:
    if len(Ns) < 3:
        raise ValueError("need at least 3 scales")
    ests = [measure_bad_set(spec, E, N, params, sampler) for N in Ns]
    target = None
    if sigma is not None:
        target = target_exponent(sigma, spec.b, kappa, skew=spec.dynamics.kind == "skew_shift")
    return fit_zeta_from(ests, target)


# --------------------------------------------------------------------------
# sublinear hit counts
# --------------------------------------------------------------------------

@dataclass
class SublinearReport:
    worst_ratio: float
    counts: list
    L: int
    delta: float
    ok: bool


def sublinear_check(spec: OperatorSpec, cover: BoxUnion, L: int, x_samples, delta: float = 0.1) -> SublinearReport:
    """max over x of #{|n| <= L : f(n, x) in cover} / L^{1-delta}."""
    idx = box_indices([-L] * spec.d, [L] * spec.d)
    counts = []
    for x in np.atleast_1d(np.asarray(x_samples, dtype=float)) if spec.b == 1 else np.atleast_2d(x_samples):
        pts = orbit(spec.dynamics, x, idx)
        counts.append(count_hits(pts, cover))
    worst = max(counts) / L ** (1 - delta) if counts else 0.0
    return SublinearReport(float(worst), counts, int(L), float(delta), bool(worst <= 1.0))


# --------------------------------------------------------------------------
# improvement across scales
# --------------------------------------------------------------------------

@dataclass
class ImprovementReport:
    Ns: tuple
    estimates: list
    sublinear: SublinearReport
    measured: dict           # mu_hat, zeta_hat, c2_hat at N3 and c2_hat at N1
    targets: dict
    hypotheses_ok: bool
    notes: list

    def to_json(self) -> dict:
        return {"Ns": list(self.Ns), "estimates": [e.to_json() for e in self.estimates],
                "sublinear": vars(self.sublinear), "measured": self.measured, "targets": self.targets,
                "hypotheses_ok": self.hypotheses_ok, "notes": self.notes, "tag": "not-asymptotic"}


def _mu_hat(est: LdtEstimate) -> float:
    ln = [v for v, bad in zip(est.samples["log_norm"], est.samples["bad"]) if not bad and v > 1]
    if not ln:
        return math.nan
    return float(max(math.log(v) for v in ln) / math.log(est.N))


def _c2_hat(est: LdtEstimate) -> float:
    r = [v for v in est.samples["rate"] if math.isfinite(v)]
    return float(np.median(r)) if r else math.nan


def _zeta_hat(est: LdtEstimate) -> float:
    f = est.fraction
    if not (0 < f < 1):
        return math.nan
    return float(math.log(-math.log(f)) / math.log(est.N))


def scale_improvement_report(spec: OperatorSpec, E: float, Ns: tuple, params: PropertyPParams,
                             sampler: Sampler = Sampler(count=200), delta: float = 0.1,
                             sigma: float | None = None, eps: float = 0.01,
                             hypothesis_fraction: float = 0.5) -> ImprovementReport:
    N1, N2, N3 = Ns
    if not (N1 < N2 < N3):
        raise ValueError("need N1 < N2 < N3")
    ests = [measure_bad_set(spec, E, N, params, sampler) for N in Ns]
    xs = sampler.points()[: min(20, sampler.count)]
    sub = sublinear_check(spec, ests[0].cover, N3, xs if spec.b == 1 else
                          np.column_stack([xs] + [np.full(len(xs), 0.5)] * (spec.b - 1)), delta)
    b = spec.b
    s = params.mu if sigma is None else sigma
    targets = {"mu": s, "zeta": (s - 1) * delta / b + delta ** 2 / b - eps,
               "c2": params.c2 - N1 ** (-params.sigma_t / 2)}
    measured = {"mu_hat": _mu_hat(ests[2]), "zeta_hat": _zeta_hat(ests[2]),
                "c2_hat": _c2_hat(ests[2]), "c2_hat_N1": _c2_hat(ests[0])}
    hyp = ests[0].fraction < hypothesis_fraction
    notes = [f"scale ratio N2/N1 = {N2 / N1:.2f}; the induction needs N2 >= N1^C, unreachable here",
             "measured values are desk-scale; no comparison is asserted"]
    if not hyp:
        notes.insert(0, f"hypothesis failure at N1={N1}: bad fraction {ests[0].fraction:.3f}")
    return ImprovementReport(tuple(Ns), ests, sub, measured, targets, bool(hyp), notes)
