"""Finite-volume Green's functions and the identities used to glue them.

The central object is :class:`GreensResult`: the inverse of a restricted
matrix together with its norm, a singularity flag and a decay fit.  The rest
of the module checks the resolvent identity, the Schur test, the coupling
lemma (norm bound from a cover by good windows) and the decay-propagation
estimate.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .lattice import LatticeRegion, diam, width_witnesses, enumerate_elementary_shapes, translate
from .operators import RegionMatrix

COND_LIMIT = 1e14
POWER_ITERS = 30
FIT_FLOOR = 1e-280
O1_CONSTANT = 10.0


class SingularBlockError(RuntimeError):
    pass


class HypothesisError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# norms
# --------------------------------------------------------------------------

def power_norm(G: np.ndarray, iters: int = POWER_ITERS, tol: float = 1e-3, max_iters: int = 500) -> float:
    """2-norm of G by power iteration on G G*.

    Runs ``iters`` steps, then keeps going (up to ``max_iters``) while the
    estimate still moves by more than ``tol`` relative per step.
    """
    n = G.shape[1]
    if n == 0:
        return 0.0
    v = np.ones(n, dtype=G.dtype) + 1e-3 * np.cos(np.arange(n))
    v /= np.linalg.norm(v)
    est = 0.0
    GH = G.conj().T
    for it in range(max_iters):
        w = GH @ v
        u = G @ w
        nu = np.linalg.norm(u)
        if nu == 0:
            return 0.0
        new = math.sqrt(nu)
        v = u / nu
        if it >= iters - 1 and abs(new - est) <= tol * new * 1e-1:
            est = new
            break
        est = new
    return float(est)


def schur_test_bound(M: np.ndarray) -> float:
    a = np.abs(np.asarray(M))
    if a.size == 0:
        return 0.0
    return float(math.sqrt(a.sum(axis=1).max() * a.sum(axis=0).max()))


# --------------------------------------------------------------------------
# inversion and decay fit
# --------------------------------------------------------------------------

def region_scale(region: LatticeRegion) -> int:
    """The N in the class-G window |n-n'| >= N/10."""
    p = region.params
    if "size" in p:
        return int(p["size"])
    if "radius" in p:
        return int(p["radius"])
    return max(1, (diam(region) + 1) // 2)


def pair_distances(region: LatticeRegion) -> np.ndarray:
    pts = region.points
    if pts.shape[1] == 1:
        return np.abs(pts[:, 0][:, None] - pts[:, 0][None, :])
    out = np.zeros((len(pts), len(pts)), dtype=np.int64)
    for a in range(pts.shape[1]):
        np.maximum(out, np.abs(pts[:, a][:, None] - pts[:, a][None, :]), out=out)
    return out


@dataclass
class DecayFit:
    sigma_t: float
    rate: float            # least-squares rate of the per-distance envelope
    worst_rate: float      # min over admissible pairs of -log|G| / r^sigma_t
    intercept: float
    residual: float
    r_min: int
    n_points: int

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("sigma_t", "rate", "worst_rate", "intercept",
                                              "residual", "r_min", "n_points")}


def fit_decay(G: np.ndarray, region: LatticeRegion, sigma_t: float = 1.0, N: int | None = None,
              r_min: float | None = None, row: int | None = None) -> DecayFit:
    """Fit log|G(n,n')| ~ a - c |n-n'|^sigma_t on |n-n'| >= N/10.

    The fit uses the largest |G| at each distance (the envelope), so the
    rate describes the slowest decay present.  ``row`` restricts to one row.
    """
    N = region_scale(region) if N is None else N
    rmin = math.ceil(N / 10) if r_min is None else math.ceil(r_min)
    rmin = max(rmin, 1)
    a = np.abs(G)
    if row is not None:
        pts = region.points
        r = np.abs(pts - pts[row]).max(axis=1)
        vals = a[row]
    else:
        r = pair_distances(region)
        vals = a
    r = r.ravel()
    vals = vals.ravel()
    sel = (r >= rmin) & (vals > FIT_FLOOR)
    if not sel.any():
        inf = math.inf
        return DecayFit(sigma_t, inf, inf, 0.0, 0.0, rmin, 0)
    rs, lv = r[sel], np.log(vals[sel])
    worst = float(np.min(-lv / rs.astype(float) ** sigma_t))
    env = np.full(int(rs.max()) + 1, -np.inf)
    np.maximum.at(env, rs, lv)
    dist = np.nonzero(np.isfinite(env))[0]
    y = env[dist]
    xr = dist.astype(float) ** sigma_t
    if len(dist) < 2:
        return DecayFit(sigma_t, worst, worst, 0.0, 0.0, rmin, len(dist))
    A = np.vstack([xr, np.ones_like(xr)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2)))
    return DecayFit(sigma_t, float(-coef[0]), worst, float(coef[1]), resid, rmin, len(dist))


@dataclass
class GreensResult:
    region: LatticeRegion
    x: tuple
    E: float
    inverse: np.ndarray | None
    op_norm: float
    singular: bool
    residual: float = 0.0
    residual_ok: bool = True
    cond_estimate: float = 0.0
    sigma_t: float = 1.0

    @cached_property
    def decay_fit(self) -> DecayFit:
        if self.singular:
            return DecayFit(self.sigma_t, -math.inf, -math.inf, 0.0, 0.0, 0, 0)
        return fit_decay(self.inverse, self.region, self.sigma_t)

    def log_norm(self) -> float:
        return math.log(self.op_norm) if self.op_norm > 0 else -math.inf


def invert(A: np.ndarray) -> tuple[np.ndarray | None, bool, float]:
    """LU inverse with a 1-norm condition estimate; (G, singular, cond)."""
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=A.dtype), False, 1.0
    if not np.all(np.isfinite(A)):
        return None, True, math.inf
    with warnings.catch_warnings():
        # exact zero pivots are reported through the singular flag
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=False)
    if np.any(np.diag(lu) == 0):
        return None, True, math.inf
    anorm = np.abs(A).sum(axis=0).max()
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    cond = math.inf if rcond == 0 else 1.0 / rcond
    if cond > COND_LIMIT:
        return None, True, cond
    G = sla.lu_solve((lu, piv), np.eye(n, dtype=lu.dtype), check_finite=False)
    return G, False, cond


def greens(mat: RegionMatrix | np.ndarray, region: LatticeRegion | None = None, sigma_t: float = 1.0) -> GreensResult:
    if isinstance(mat, RegionMatrix):
        A, region, x, E = mat.entries, mat.region, mat.x, mat.E
    else:
        A = np.asarray(mat)
        x, E = (), 0.0
        if region is None:
            region = LatticeRegion.explicit(np.arange(A.shape[0])[:, None])
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    G, singular, cond = invert(A)
    if singular:
        return GreensResult(region, x, E, None, math.inf, True, math.inf, False, cond, sigma_t)
    nrm = power_norm(G)
    res = float(np.abs(A @ G - np.eye(A.shape[0])).max()) if A.size else 0.0
    ok = res <= 1e-8 * max(nrm, 1.0)
    return GreensResult(region, x, E, G, nrm, False, res, ok, cond, sigma_t)


# --------------------------------------------------------------------------
# classification
# --------------------------------------------------------------------------

def c2_cap(c1: float, sigma_t: float) -> float:
    return (1.0 - 5.0 ** (-sigma_t)) * c1


@dataclass
class Classification:
    is_G: bool
    is_SG: bool
    norm_ok: bool
    witness: tuple          # (i, j) worst pair in region enumeration, or ()
    witness_value: float    # log|G| + c2 r^sigma_t at the witness (<= 0 means fine)
    params: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"is_G": self.is_G, "is_SG": self.is_SG, "norm_ok": self.norm_ok,
                "witness": list(self.witness), "witness_value": self.witness_value, "params": self.params}


def classify(g: GreensResult, N: int | None = None, sigma: float = 0.5, sigma_t: float = 1.0,
             c2: float = 1.0, c1: float | None = None) -> Classification:
    if c1 is not None and c2 > c2_cap(c1, sigma_t) * (1 + 1e-12):
        raise ValueError(f"c2={c2} exceeds the cap (1-5^-s) c1 = {c2_cap(c1, sigma_t)}")
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    N = region_scale(g.region) if N is None else int(N)
    params = {"N": N, "sigma": sigma, "sigma_t": sigma_t, "c2": c2}
    if g.singular:
        return Classification(False, False, False, (), math.inf, params)
    r = pair_distances(g.region)
    sel = r >= N / 10.0
    with np.errstate(divide="ignore"):
        lg = np.log(np.abs(g.inverse))
    excess = np.where(sel, lg + c2 * r.astype(float) ** sigma_t, -np.inf)
    if excess.size and np.isfinite(excess).any():
        k = int(np.argmax(excess))
        i, j = divmod(k, excess.shape[1])
        val = float(excess[i, j])
        wit = (i, j)
    else:
        val, wit = -math.inf, ()
    is_G = val <= 0.0
    norm_ok = g.log_norm() <= N ** sigma
    return Classification(bool(is_G), bool(is_G and norm_ok), bool(norm_ok), wit, val, params)


# --------------------------------------------------------------------------
# resolvent identity
# --------------------------------------------------------------------------

@dataclass
class ResolventReport:
    identity_residual: float
    contract: float
    within_contract: bool
    greso_min_slack: float      # >= 0 when the row inequality holds everywhere
    greson_min_slack: float
    norms: tuple


def resolvent_residual(A: np.ndarray, in_first: np.ndarray, weight: np.ndarray | None = None) -> ResolventReport:
    """Check G = G1 + G2 - (G1 + G2)(A - A1 - A2) G for the split given by
    the boolean mask ``in_first`` (True for Lambda_1).

    ``weight`` is the coupling envelope matrix w(n', n'') used in the
    entrywise inequalities; by default |A| itself.
    """
    A = np.asarray(A)
    m1 = np.asarray(in_first, dtype=bool)
    i1, i2 = np.nonzero(m1)[0], np.nonzero(~m1)[0]
    G, s, _ = invert(A)
    if s:
        raise SingularBlockError("Lambda")
    G1, s1, _ = invert(A[np.ix_(i1, i1)])
    if s1:
        raise SingularBlockError("Lambda_1")
    G2, s2, _ = invert(A[np.ix_(i2, i2)])
    if s2:
        raise SingularBlockError("Lambda_2")
    n = A.shape[0]
    D = np.zeros((n, n), dtype=np.result_type(G1, G2, A))
    D[np.ix_(i1, i1)] = G1
    D[np.ix_(i2, i2)] = G2
    C = A.astype(D.dtype, copy=True)
    C[np.ix_(i1, i1)] = 0
    C[np.ix_(i2, i2)] = 0
    res = float(np.abs(G - D + D @ C @ G).max())
    nG, n1, n2 = (np.linalg.norm(X, 2) if X.size else 0.0 for X in (G, G1, G2))
    contract = 1e-9 * (1 + nG) * (1 + n1 + n2)

    W = np.abs(A) if weight is None else np.asarray(weight)
    W12 = W[np.ix_(i1, i2)]
    aG = np.abs(G)
    # rows m in Lambda_1, all n
    rhs1 = np.abs(G1) @ W12 @ aG[i2, :]
    rhs1[:, i1] += np.abs(G1)
    lhs1 = aG[i1, :]
    scale1 = np.maximum(rhs1, 1e-300)
    slack1 = float(((rhs1 - lhs1) / scale1).min()) if lhs1.size else math.inf
    # columns n in Lambda_2, all m
    rhs2 = aG[:, i1] @ W12 @ np.abs(G2)
    rhs2[i2, :] += np.abs(G2)
    lhs2 = aG[:, i2]
    scale2 = np.maximum(rhs2, 1e-300)
    slack2 = float(((rhs2 - lhs2) / scale2).min()) if lhs2.size else math.inf
    return ResolventReport(res, contract, res <= contract, slack1, slack2, (nG, n1, n2))


# --------------------------------------------------------------------------
# coupling lemma and decay propagation
# --------------------------------------------------------------------------

def _logsumexp(v: np.ndarray) -> float:
    m = float(np.max(v))
    if not np.isfinite(m):
        return m
    return m + math.log(float(np.sum(np.exp(v - m))))


def ml_log_lhs(M: int, c2: float, sigma: float, sigma_t: float, d: int, tol: float = 1e-18) -> float:
    """log of 2 e^{M^s}(2M+1)^d e^{c2 M^st/10^st} sum_j (M+2j+1)^d e^{-c2 (j+M/2)^st}."""
    head = math.log(2.0) + M ** sigma + d * math.log(2 * M + 1) + c2 * M ** sigma_t / 10 ** sigma_t
    total = -math.inf
    j0, chunk = 0, 4096
    while True:
        j = np.arange(j0, j0 + chunk, dtype=np.float64)
        terms = d * np.log(M + 2 * j + 1) - c2 * (j + M / 2.0) ** sigma_t
        total = np.logaddexp(total, _logsumexp(terms))
        if terms[-1] < total + math.log(tol) and terms[-1] < terms[-2]:
            break
        j0 += chunk
        if j0 > 10 ** 8:
            break
    return float(head + total)


def ml_condition(M0: int, M1: int, c2_range: tuple, sigma: float, sigma_t: float, d: int,
                 grid: int = 9) -> float:
    """sup over M in [M0, M1] and c2 in the range of the log left side."""
    lo, hi = c2_range
    cs = np.linspace(lo, hi, grid) if hi > lo else np.array([lo])
    Ms = range(int(M0), int(M1) + 1)
    return max(ml_log_lhs(M, float(c), sigma, sigma_t, d) for M in Ms for c in cs)


def ml_threshold(c2_range: tuple, sigma: float, sigma_t: float, d: int, M_max: int = 5000) -> int | None:
    """Smallest M0 such that the condition holds for every M in [M0, M_max]."""
    ok = [ml_condition(M, M, c2_range, sigma, sigma_t, d) <= math.log(0.5) for M in range(1, M_max + 1)]
    if not ok[-1]:
        return None
    k = len(ok) - 1
    while k > 0 and ok[k - 1]:
        k -= 1
    return k + 1


@dataclass
class Window:
    region: LatticeRegion
    M: int


def window_cover(region: LatticeRegion, M: int) -> tuple[list[Window], np.ndarray]:
    """Width witnesses of size M: (distinct windows, window index per point)."""
    d = region.d
    wit = width_witnesses(region, M)
    shapes = enumerate_elementary_shapes(d, M)
    keys = {}
    windows = []
    owner = np.full(len(region), -1, dtype=np.int64)
    for p in np.nonzero(wit.covered)[0]:
        key = (int(wit.shape_index[p]),) + tuple(int(v) for v in wit.centers[p])
        if key not in keys:
            keys[key] = len(windows)
            windows.append(Window(translate(shapes[key[0]], key[1:]), M))
        owner[p] = keys[key]
    return windows, owner


@dataclass
class CouplingReport:
    hypotheses_ok: bool
    uncovered: list
    bad_windows: list
    ml_log_lhs: float
    ml_ok: bool
    norm: float
    bound: float
    conclusion_ok: bool

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _window_checks(A: np.ndarray, region: LatticeRegion, windows: Sequence[Window], owner: np.ndarray,
                   sigma: float, sigma_t: float, c2: float) -> tuple[list, list]:
    """Evaluate the window hypotheses; returns (uncovered points, bad window ids)."""
    uncovered = [tuple(int(v) for v in region.points[p]) for p in np.nonzero(owner < 0)[0]]
    bad = set()
    cache = {}
    for w_id, W in enumerate(windows):
        idx = region.index_of(W.region.points)
        if np.any(idx < 0):
            bad.add(w_id)
            continue
        G, sing, _ = invert(A[np.ix_(idx, idx)])
        if sing or math.log(max(power_norm(G), 1e-300)) > math.log(2) + W.M ** sigma:
            bad.add(w_id)
            continue
        cache[w_id] = (idx, G)
    for p in np.nonzero(owner >= 0)[0]:
        w_id = int(owner[p])
        if w_id in bad:
            continue
        W = windows[w_id]
        idx, G = cache[w_id]
        n = region.points[p]
        row = int(np.nonzero(idx == p)[0][0]) if np.any(idx == p) else -1
        if row < 0:
            bad.add(w_id)
            continue
        # dist(n, Lambda \ W) >= M/2
        outside = np.ones(len(region), dtype=bool)
        outside[idx] = False
        if outside.any():
            dd = np.abs(region.points[outside] - n).max(axis=1).min()
            if 2 * dd < W.M:
                bad.add(w_id)
                continue
        r = np.abs(W.region.points - n).max(axis=1)
        far = r >= W.M / 10.0
        with np.errstate(divide="ignore"):
            lg = np.log(np.abs(G[row, far]))
        if np.any(lg > math.log(2) - c2 * r[far].astype(float) ** sigma_t):
            bad.add(w_id)
    return uncovered, sorted(bad)


def coupling_check(A: np.ndarray, region: LatticeRegion, windows: Sequence[Window], owner: np.ndarray,
                   M0: int, M1: int, sigma: float, sigma_t: float, c2_range: tuple) -> CouplingReport:
    """Norm bound ||G_Lambda|| <= 4 (2 M1 + 1)^d e^{M1^sigma} from a good cover."""
    if np.any(owner < 0):
        missing = [tuple(int(v) for v in region.points[p]) for p in np.nonzero(owner < 0)[0]]
        raise HypothesisError(f"no window for {len(missing)} points, e.g. {missing[:5]}")
    d = region.d
    c2 = float(c2_range[0])
    uncovered, bad = _window_checks(A, region, windows, owner, sigma, sigma_t, c2)
    sizes_ok = all(M0 <= W.M <= M1 for W in windows)
    lhs = ml_condition(M0, M1, c2_range, sigma, sigma_t, d)
    ml_ok = lhs <= math.log(0.5)
    G, sing, _ = invert(A)
    norm = math.inf if sing else power_norm(G)
    bound = 4.0 * (2 * M1 + 1) ** d * math.exp(M1 ** sigma)
    hyp = not uncovered and not bad and sizes_ok
    return CouplingReport(hyp, uncovered, bad, lhs, ml_ok, norm, bound, bool(norm <= bound))


@dataclass
class PropagationReport:
    hypotheses_ok: bool
    bad_windows: list
    M0: float
    measured: float
    predicted: float
    margin: float
    norm: float
    norm_bound: float


def predicted_rate(c2: float, M0: float, N: int, sigma: float, sigma_t: float, kappa_exp: float, s: float,
                   O1: float = O1_CONSTANT) -> float:
    return c2 - O1 * (M0 ** -(sigma_t - s) + M0 ** -(sigma_t - sigma) + N ** -(sigma_t - kappa_exp))


def decay_propagation_check(A: np.ndarray, region: LatticeRegion, windows: Sequence[Window], owner: np.ndarray,
                            N: int, kappa_exp: float, s: float, sigma: float, sigma_t: float, c2: float,
                            c1: float | None = None, M0: float | None = None) -> PropagationReport:
    if c1 is not None and c2 > c2_cap(c1, sigma_t) * (1 + 1e-12):
        raise ValueError("c2 exceeds the cap (1-5^-s) c1")
    if np.any(owner < 0):
        raise HypothesisError("some points have no window")
    M0 = math.log(N) ** (1.0 / s) if M0 is None else float(M0)
    _, bad = _window_checks(A, region, windows, owner, sigma, sigma_t, c2)
    sizes_ok = all(M0 - 1e-9 <= W.M <= N ** kappa_exp + 1e-9 for W in windows)
    G, sing, _ = invert(A)
    if sing:
        measured, norm = -math.inf, math.inf
    else:
        measured = fit_decay(G, region, sigma_t, N=N).worst_rate
        norm = power_norm(G)
    pred = predicted_rate(c2, M0, N, sigma, sigma_t, kappa_exp, s)
    nb = 4.0 * (1 + 2 * N ** kappa_exp) ** region.d * math.exp(N ** (kappa_exp * sigma))
    return PropagationReport(bool(sizes_ok and not bad), bad, M0, measured, pred, measured - pred, norm, nb)
