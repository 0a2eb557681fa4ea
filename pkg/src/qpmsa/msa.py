"""Multi-scale induction: schedules, region sampling, annulus classification
and the end-to-end decay propagation report."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .greens import GreensResult, classify, fit_decay, greens
from .lattice import (Exhaustion, LatticeRegion, cube, enumerate_elementary_shapes,
                      translate, width_witnesses)
from .operators import OperatorSpec, assemble

REPORT_SCHEMA_VERSION = 1
THETA_FINAL = 0.5          # c2 at the final scale is c2_init - N^-THETA_FINAL
LADDER_C = 1.0             # stand-in for the dimensional constant C(d) in the rate ladder


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleSchedule:
    M0: int
    rho: float
    N: int
    sigma: float
    sigma_t: float
    scales: tuple
    kappa_bad: float


def schedule(M0: int, rho: float, N: int, sigma: float = 0.7, sigma_t: float = 1.0,
             kappa_bad: float | None = None, delta_prime: float = 0.1) -> ScaleSchedule:
    """M_{j+1} = floor(M_j^rho) until N is reached; the last scale is snapped to N."""
    if not (0 < sigma < sigma_t <= 1):
        raise ScheduleError(f"need 0 < sigma < sigma_t <= 1 (sigma={sigma}, sigma_t={sigma_t})")
    if not (1 < rho < 1 + sigma_t - sigma):
        raise ScheduleError(f"rho={rho} outside the open interval (1, {1 + sigma_t - sigma})")
    if not (1 <= M0 <= N):
        raise ScheduleError(f"need 1 <= M0 <= N (M0={M0}, N={N})")
    scales = [int(M0)]
    while scales[-1] < N:
        nxt = int(math.floor(scales[-1] ** rho))
        if nxt <= scales[-1]:
            nxt = scales[-1] + 1
        scales.append(min(nxt, N))
    kb = N ** (-delta_prime) if kappa_bad is None else float(kappa_bad)
    return ScaleSchedule(int(M0), float(rho), int(N), float(sigma), float(sigma_t), tuple(scales), kb)


def rate_ladder(c2: float, sched: ScaleSchedule, d: int = 1, C: float = LADDER_C) -> list[float]:
    """gamma_{i+1} = gamma_i (1 - C kappa s~) - C kappa rho log M_i / M_i^{1-rho+s~-s}, floored at 0.

    The ladder is the product of per-scale losses written as a recursion, which keeps
    gamma_m non-increasing.
    """
    k, s, st, rho = sched.kappa_bad, sched.sigma, sched.sigma_t, sched.rho
    expo = 1 - rho + st - s
    g = [float(c2)]
    for M in sched.scales[:-1]:
        nxt = g[-1] * (1 - C * d * k * st) - C * d * k * rho * math.log(M) / M ** expo
        g.append(max(nxt, 0.0))
    return g


def sublinear_budget(N: int, M: int, varsigma: float) -> float:
    """N^varsigma / N^xi with M = N^xi."""
    return N ** varsigma / M


# --------------------------------------------------------------------------
# cached Green's functions
# --------------------------------------------------------------------------

class GreenCache:
    """Green's functions keyed by (region, x, E); order of requests is irrelevant."""

    def __init__(self, spec: OperatorSpec, x, E: float, sigma_t: float = 1.0):
        self.spec, self.x, self.E, self.sigma_t = spec, x, float(E), sigma_t
        self._store: dict = {}

    @staticmethod
    def key(region: LatticeRegion):
        if region.kind in ("cube", "elementary"):
            return (region.kind, json.dumps(region.params, sort_keys=True))
        return ("pts", region.points.tobytes())

    def get(self, region: LatticeRegion) -> GreensResult:
        k = self.key(region)
        g = self._store.get(k)
        if g is None:
            g = greens(assemble(self.spec, self.x, self.E, region), sigma_t=self.sigma_t)
            self._store[k] = g
        return g

    def __len__(self) -> int:
        return len(self._store)


# --------------------------------------------------------------------------
# annuli and bad families
# --------------------------------------------------------------------------

def classify_annuli(spec: OperatorSpec, x, E: float, exhaustion: Exhaustion, M: int, c2: float,
                    sigma_t: float = 1.0, cache: GreenCache | None = None) -> list[bool]:
    """An annulus is good when every point has a good size-M window inside it
    that keeps the point M/2 away from the rest of the annulus."""
    cache = GreenCache(spec, x, E, sigma_t) if cache is None else cache
    d = exhaustion.base.d
    shapes = enumerate_elementary_shapes(d, M)

    def accept(q, centres):
        out = np.zeros(len(centres), dtype=bool)
        for i, c in enumerate(centres):
            g = cache.get(translate(shapes[q], c))
            out[i] = (not g.singular) and classify(g, M, 1.0, sigma_t, c2).is_G
        return out

    flags = []
    for ann in exhaustion.annuli:
        wit = width_witnesses(ann, M, accept=accept, shapes=shapes)
        flags.append(bool(wit.covered.all()))
    return flags


def _disjoint_greedy(regions: Sequence[LatticeRegion]) -> list[int]:
    """Greedy pairwise-disjoint selection in the given order."""
    taken: set = set()
    chosen = []
    for i, R in enumerate(regions):
        pts = {tuple(p) for p in R.points.tolist()}
        if taken.isdisjoint(pts):
            chosen.append(i)
            taken |= pts
    return chosen


@dataclass
class BadFamily:
    M: int
    count: int
    positions: list
    budget: float
    within_budget: bool
    note: str = "greedy packing on a stride-(2M+1) grid: a lower bound on the maximum"


def _grid_centres(base: LatticeRegion, M: int, stride: int) -> np.ndarray:
    lo, hi = base.bbox()
    axes = [np.arange(a + M, b - M + 1, stride) for a, b in zip(lo, hi)]
    if any(len(a) == 0 for a in axes):
        return np.zeros((0, base.d), dtype=np.int64)
    g = np.meshgrid(*axes, indexing="ij")
    c = np.stack([v.ravel() for v in g], axis=1)
    # keep centres whose cube lies inside the base region
    keep = [bool(base.contains(cube(ci, M).points).all()) for ci in c]
    return c[np.asarray(keep, dtype=bool)]


def bad_family_count(spec: OperatorSpec, x, E: float, M: int, base: LatticeRegion, c2: float,
                     sigma_t: float = 1.0, varsigma: float = 0.9, N: int | None = None,
                     cache: GreenCache | None = None) -> BadFamily:
    cache = GreenCache(spec, x, E, sigma_t) if cache is None else cache
    if 2 * M > int(np.ptp(base.points, axis=0).max()):
        raise ValueError("M exceeds the base region")
    N = int(base.params.get("radius", base.params.get("size", (np.ptp(base.points, axis=0).max()) // 2))) \
        if N is None else N
    bad = []
    for c in _grid_centres(base, M, 2 * M + 1):
        g = cache.get(cube(c, M))
        if not classify(g, M, 1.0, sigma_t, c2).is_G:
            bad.append(c.tolist())
    budget = sublinear_budget(N, M, varsigma)
    return BadFamily(M, len(bad), bad, budget, len(bad) <= budget)


# --------------------------------------------------------------------------
# induction
# --------------------------------------------------------------------------

@dataclass
class ScaleReport:
    scale: int
    n_sampled: int
    n_bad: int
    bad_positions: list
    disjoint_bad: int
    budget: float
    sublinear_ok: bool
    rate: float                 # median least-squares rate over sampled regions
    rate_residual: float        # median fit residual
    rate_q10: float
    max_log_norm: float
    log_norm_bound: float       # L^sigma with L = diam = 2M
    norm_ok: bool
    gamma: float                # rate ladder value at this scale
    c2: float

    @property
    def hypotheses_ok(self) -> bool:
        return self.sublinear_ok and self.norm_ok


@dataclass
class InductionResult:
    scales: list
    verdict: str                 # holds | fails | hypotheses-not-met
    final_rate: float
    final_worst_rate: float
    final_residual: float
    base_rate: float
    c2_init: float
    c2_final: float
    theta_hat: float
    final_log_norm: float
    annulus_bad_fraction: float | None
    params: dict = field(default_factory=dict)
    seed: int | None = None

    @property
    def hypotheses_ok(self) -> bool:
        return all(s.hypotheses_ok for s in self.scales)

    @property
    def rate_ratio(self) -> float:
        return self.final_rate / self.base_rate if self.base_rate > 0 else math.nan

    def to_json(self) -> dict:
        out = asdict(self)
        out["schema_version"] = REPORT_SCHEMA_VERSION
        out["hypotheses_ok"] = self.hypotheses_ok
        out["rate_ratio"] = self.rate_ratio
        return _finite(out)


def _finite(obj):
    """Replace non-finite floats so reports are strict JSON."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def sample_regions(base: LatticeRegion, M: int, rng: np.random.Generator, frac: float = 0.1) -> list[LatticeRegion]:
    """Cubes on a stride-floor(M/2) grid, plus every shape at a random 10% of the centres."""
    stride = max(M // 2, 1)
    centres = _grid_centres(base, M, stride)
    regions = [cube(c, M) for c in centres]
    shapes = enumerate_elementary_shapes(base.d, M)
    if len(shapes) > 1 and len(centres):
        k = max(1, int(round(frac * len(centres))))
        pick = np.sort(rng.choice(len(centres), size=k, replace=False))
        for i in pick:
            for shp in shapes[1:]:
                regions.append(translate(shp, centres[i]))
    return regions


def _theta_fit(c2: float, scales: Sequence[int], rates: Sequence[float]) -> float:
    """Fit c2 - rate_j ~ M_j^-theta; +inf when no scale loses rate."""
    loss = np.array([c2 - r for r in rates], dtype=float)
    ms = np.array(scales, dtype=float)
    sel = np.isfinite(loss) & (loss > 0)
    if sel.sum() < 2:
        return math.inf
    slope = np.polyfit(np.log(ms[sel]), np.log(loss[sel]), 1)[0]
    return float(-slope)


def run_induction(spec: OperatorSpec, x, E: float, sched: ScaleSchedule, c2_init: float,
                  varsigma: float = 0.9, seed: int | None = 0, annuli: bool = False,
                  rng: np.random.Generator | None = None, cap: int = 20_000) -> InductionResult:
    """Classify sampled regions at each scale, check both hypotheses, then
    invert the full region and compare its decay with the initial scale."""
    d = spec.d
    N = sched.N
    base = cube(np.zeros(d, dtype=np.int64), N)
    if len(base) > cap:
        raise ValueError(f"final region has {len(base)} sites, over the cap {cap}")
    rng = np.random.default_rng(seed) if rng is None else rng
    cache = GreenCache(spec, x, E, sched.sigma_t)
    ladder = rate_ladder(c2_init, sched, d)
    reports = []
    for j, M in enumerate(sched.scales[:-1]):
        regions = sample_regions(base, M, rng)
        bad, bad_regions, rates, resid, lnorms = [], [], [], [], []
        for R in regions:
            g = cache.get(R)
            cl = classify(g, M, sched.sigma, sched.sigma_t, c2_init)
            lnorms.append(g.log_norm())
            if not cl.is_G:
                bad.append(R.params["center"])
                bad_regions.append(R)
            f = g.decay_fit
            rates.append(f.rate)
            resid.append(f.residual)
        dis = len(_disjoint_greedy(bad_regions))
        budget = sublinear_budget(N, M, varsigma)
        L = 2 * M               # R_L is indexed by diameter; a size-M region has diameter 2M
        mx = max(lnorms) if lnorms else -math.inf
        finite_rates = np.array([r for r in rates if np.isfinite(r)] or [math.nan])
        reports.append(ScaleReport(
            int(M), len(regions), len(bad), bad, dis, budget, dis <= budget,
            float(np.median(finite_rates)), float(np.median(resid)) if resid else math.nan,
            float(np.quantile(finite_rates, 0.1)), float(mx), float(L ** sched.sigma),
            bool(mx <= L ** sched.sigma), ladder[j], c2_init))

    g = cache.get(base)
    fit = fit_decay(g.inverse, base, sched.sigma_t, N=N) if not g.singular else None
    final_rate = fit.rate if fit else -math.inf
    final_worst = fit.worst_rate if fit else -math.inf
    final_norm_ok = g.log_norm() <= (2 * N) ** sched.sigma
    c2_final = c2_init - N ** (-THETA_FINAL)
    base_rate = reports[0].rate if reports else final_rate
    theta = _theta_fit(c2_init, [r.scale for r in reports] + [N], [r.rate for r in reports] + [final_rate])

    ann_frac = None
    if annuli and 10 * sched.M0 <= N:
        from .lattice import build_exhaustion
        try:
            ex = build_exhaustion(base, np.zeros(d, dtype=np.int64), sched.M0, N=N)
            flags = classify_annuli(spec, x, E, ex, sched.M0, c2_init, sched.sigma_t, cache)
            ann_frac = 1.0 - sum(flags) / len(flags)
        except Exception:       # exhaustion can be infeasible for odd shapes
            ann_frac = None

    hyp = all(r.hypotheses_ok for r in reports) and final_norm_ok
    if not hyp:
        verdict = "hypotheses-not-met"
    else:
        ok = (not g.singular) and classify(g, N, sched.sigma, sched.sigma_t, max(c2_final, 1e-12)).is_G
        verdict = "holds" if ok else "fails"
    params = {"spec": spec.name, "spec_hash": spec.spec_hash(), "x": _as_list(x), "E": E,
              "M0": sched.M0, "rho": sched.rho, "N": N, "sigma": sched.sigma,
              "sigma_t": sched.sigma_t, "varsigma": varsigma, "kappa_bad": sched.kappa_bad,
              "scales": list(sched.scales), "ladder": ladder}
    return InductionResult(reports, verdict, float(final_rate), float(final_worst),
                           float(fit.residual) if fit else math.nan, float(base_rate), float(c2_init),
                           float(c2_final), theta, float(g.log_norm()), ann_frac, params, seed)


def _as_list(x):
    return np.atleast_1d(np.asarray(x, dtype=float)).tolist()


def default_c2(lam: float) -> float:
    """0.5 ln(lambda), floored at 0.25 so weak coupling still gets a positive target."""
    return max(0.5 * math.log(lam), 0.25) if lam > 0 else 0.25
