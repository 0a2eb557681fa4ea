"""Schur complements and a grid measurement of matrix-valued Cartan estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla

from .greens import invert

SANDWICH_C = 8.0


class SchurError(RuntimeError):
    pass


@dataclass
class SandwichReport:
    S: np.ndarray
    singular_T: bool
    singular_S: bool
    block_error: float          # relative error between (T^-1)_VV and S^-1
    norm_Sinv: float
    norm_Tinv: float
    upper_rhs: float            # C (1+|T2|)(1+|T3|)(1+|T1^-1|)^2 (1+|S^-1|)
    lower_ok: bool
    upper_ok: bool
    ratio: float                # |T^-1| / (upper_rhs / C), the empirical constant


def _norm2(X: np.ndarray) -> float:
    return float(np.linalg.norm(X, 2)) if X.size else 0.0


def split_blocks(T: np.ndarray, V: Sequence[int]):
    n = T.shape[0]
    V = np.asarray(sorted(set(int(v) for v in V)), dtype=np.int64)
    keep = np.setdiff1d(np.arange(n), V)
    perm = np.concatenate([keep, V])
    P = T[np.ix_(perm, perm)]
    k = len(keep)
    return P[:k, :k], P[:k, k:], P[k:, :k], P[k:, k:], keep, V


def schur_complement(T: np.ndarray, V: Sequence[int], C: float = SANDWICH_C) -> SandwichReport:
    """S = T4 - T3 T1^{-1} T2 with V permuted to the trailing block."""
    T = np.asarray(T)
    T1, T2, T3, T4, keep, V = split_blocks(T, V)
    T1inv, s1, _ = invert(T1)
    if s1:
        raise SchurError("T1 is singular")
    S = T4 - T3 @ T1inv @ T2
    Sinv, sS, _ = invert(S)
    Tinv, sT, _ = invert(T)
    nT1 = _norm2(T1inv)
    core = (1 + _norm2(T2)) * (1 + _norm2(T3)) * (1 + nT1) ** 2
    if sS or sT:
        nS = math.inf if sS else _norm2(Sinv)
        nT = math.inf if sT else _norm2(Tinv)
        return SandwichReport(S, sT, sS, math.nan, nS, nT, math.inf, sS == sT, sS == sT, math.nan)
    block = Tinv[np.ix_(V, V)]
    err = float(np.abs(block - Sinv).max() / max(np.abs(Sinv).max(), 1e-300))
    nS, nT = _norm2(Sinv), _norm2(Tinv)
    rhs0 = core * (1 + nS)
    # ||S^-1|| is the norm of a sub-block of T^-1, so the lower bound is exact;
    # a relative 1e-12 allows for the two separate SVDs.
    lower_ok = nS <= nT * (1 + 1e-12)
    return SandwichReport(S, False, False, err, nS, nT, C * rhs0, lower_ok, nT <= C * rhs0, nT / rhs0)


# --------------------------------------------------------------------------
# Cartan families and grid measurement
# --------------------------------------------------------------------------

@dataclass
class CartanFamily:
    """A real-analytic matrix family T(x), x in [-delta, delta]^J.

    ``inv_norm(xs)`` returns ||T(x)^{-1}|| for an (P, J) array of parameters.
    ``lipschitz`` bounds the Lipschitz constant of x -> 1/||T(x)^{-1}||
    (the smallest singular value) and enables exact cell elimination when
    refining the grid in J = 1.
    """
    name: str
    J: int
    delta: float
    delta1: float
    B1: float
    B2: float
    B3: float
    M: int
    inv_norm: Callable[[np.ndarray], np.ndarray]
    lipschitz: float | None = None
    meta: dict = field(default_factory=dict)


def diag_sine_family(a: Sequence[float] = (-0.8, -0.4, 0.0, 0.4, 0.8), delta: float = 1.0,
                     delta1: float = 0.1, B3: float = 1e7) -> CartanFamily:
    """T(x) = diag(sin 2 pi x - a_i); V(x) = the index nearest to resonance."""
    a = np.asarray(a, dtype=np.float64)
    gaps = np.diff(np.sort(a))
    B1 = math.cosh(2 * math.pi * delta1) + float(np.max(np.abs(a)))
    B2 = 2.0 / float(gaps.min()) if len(a) > 1 else 1.0

    def inv_norm(xs):
        s = np.sin(2 * np.pi * np.asarray(xs, dtype=np.float64).reshape(len(xs), -1)[:, 0])
        with np.errstate(divide="ignore"):
            return 1.0 / np.min(np.abs(s[:, None] - a[None, :]), axis=1)

    return CartanFamily("diag_sine", 1, delta, delta1, B1, B2, B3, 1, inv_norm, 2 * math.pi,
                        {"a": a.tolist()})


def scalar_family(delta: float = 1.0) -> CartanFamily:
    """T(x) = x I (J = 1)."""
    def inv_norm(xs):
        x = np.abs(np.asarray(xs, dtype=np.float64).reshape(len(xs), -1)[:, 0])
        with np.errstate(divide="ignore"):
            return 1.0 / x
    return CartanFamily("scalar", 1, delta, 0.1, 1.0 + delta, 1.0, 1e6, 1, inv_norm, 1.0)


def operator_family(spec, region, E: float = 0.0, delta: float = 1.0, B3: float = 1e6) -> CartanFamily:
    """T(x) = R (H(x) - E) R on a 1-D interval (tridiagonal when the hopping is
    nearest-neighbour), parametrised by the phase x in [-delta/2, delta/2]."""
    from .operators import assemble

    def inv_norm(xs):
        xs = np.asarray(xs, dtype=np.float64).reshape(len(xs), -1)
        out = np.empty(len(xs))
        for i, x in enumerate(xs):
            A = assemble(spec, x if spec.b > 1 else x[0], E, region).entries
            if np.allclose(A, np.triu(np.tril(A, 1), -1)) and np.isrealobj(A):
                ev = sla.eigvalsh_tridiagonal(np.diag(A).copy(), np.diag(A, 1).copy())
            else:
                ev = np.linalg.eigvalsh(A) if spec.self_adjoint else np.linalg.svd(A, compute_uv=False)
            m = np.min(np.abs(ev))
            out[i] = math.inf if m == 0 else 1.0 / m
        return out

    hop = 2.0 / spec.coupling if math.isfinite(spec.coupling) else 0.0
    B1 = spec.potential.sup_bound() * math.cosh(2 * math.pi * 0.1) + hop + abs(E)
    lip = 2 * math.pi * spec.potential.sup_bound()
    return CartanFamily(f"operator:{spec.name}", spec.b, delta, 0.1, B1, B1, B3, len(region), inv_norm, lip)


@dataclass
class CartanPoint:
    eps: float
    measure: float
    hits: int
    mc4_ok: bool


@dataclass
class CartanResult:
    family: str
    points: list
    mc3_ok: bool
    mc3_lhs: float
    mc3_rhs: float
    fitted_c: float
    fitted_C: float
    monotone: bool

    def bound_rhs(self, eps: float, fam: CartanFamily) -> float:
        u = _cartan_u(eps, fam)
        return self.fitted_C * fam.delta ** fam.J * math.exp(-self.fitted_c * u)

    def rows(self, fam: CartanFamily) -> list:
        return [(p.eps, p.measure, self.bound_rhs(p.eps, fam)) for p in self.points]


def _cartan_u(eps: float, fam: CartanFamily) -> float:
    return (math.log(1.0 / eps) / (fam.M * math.log(fam.B1 + fam.B2 + fam.B3))) ** (1.0 / fam.J)


def _grid(J: int, lo: float, hi: float, n: int) -> tuple[np.ndarray, float]:
    """Cell-centred grid with n points per axis; returns points and cell volume."""
    h = (hi - lo) / n
    ax = lo + (np.arange(n) + 0.5) * h
    if J == 1:
        return ax[:, None], h
    g = np.meshgrid(*([ax] * J), indexing="ij")
    return np.stack([v.ravel() for v in g], axis=1), h ** J


def default_grid_size(J: int) -> int:
    return 10 ** 6 if J == 1 else 2000      # 2000^2 = 4e6 points for J = 2


def _refined_measure(fam: CartanFamily, centres: np.ndarray, h: float, vals: np.ndarray,
                     eps: float, factor: int = 64, depth: int = 4) -> tuple[float, int]:
    """J = 1: measure of {1/||T^-1|| <= eps} using Lipschitz cell elimination.

    A cell of width h whose centre has smallest singular value
    s > eps + L h / 2 contains no bad point; other cells are subdivided.
    """
    L = fam.lipschitz
    smin = 1.0 / vals
    maybe = smin <= eps + L * h / 2
    if depth == 0 or h <= eps * 1e-3 or not maybe.any():
        bad = smin <= eps
        return float(bad.sum() * h), int(bad.sum())
    sure_bad = smin[maybe] + L * h / 2 <= eps
    total = float(sure_bad.sum() * h)
    hits = int(sure_bad.sum())
    cells = centres[maybe][~sure_bad]
    if len(cells) == 0:
        return total, hits
    hh = h / factor
    offs = (np.arange(factor) + 0.5) * hh - h / 2
    sub = (cells[:, None] + offs[None, :]).reshape(-1, 1)
    sv = fam.inv_norm(sub)
    m, k = _refined_measure(fam, sub[:, 0], hh, sv, eps, factor, depth - 1)
    return total + m, hits + k


def cartan_measure(fam: CartanFamily, eps_list: Sequence[float], n_grid: int | None = None,
                   refine: bool = True) -> CartanResult:
    """Grid measurement of mes{x in [-delta/2, delta/2]^J : ||T^-1(x)|| >= 1/eps}."""
    J = fam.J
    n = default_grid_size(J) if n_grid is None else int(n_grid)
    xs, vol = _grid(J, -fam.delta / 2, fam.delta / 2, n)
    vals = fam.inv_norm(xs)
    pts = []
    for eps in sorted(eps_list, reverse=True):
        bad = vals >= 1.0 / eps
        if refine and J == 1 and fam.lipschitz is not None:
            mes, hits = _refined_measure(fam, xs[:, 0], vol, vals, eps)
        else:
            mes, hits = float(bad.sum() * vol), int(bad.sum())
        mc4 = eps <= (1 + fam.B1 + fam.B2) ** (-10 * fam.M)
        pts.append(CartanPoint(float(eps), mes, hits, bool(mc4)))
    # (mc3) on the full box [-delta, delta]^J
    xs3, vol3 = _grid(J, -fam.delta, fam.delta, n)
    lhs3 = float(np.count_nonzero(fam.inv_norm(xs3) >= fam.B3) * vol3)
    rhs3 = 10.0 ** (-3 * J) * J ** (-J) * fam.delta1 ** J * (1 + fam.B1) ** (-J) * (1 + fam.B2) ** (-J)
    mono = all(b.measure <= a.measure for a, b in zip(pts, pts[1:]))
    c, C = fit_envelope(fam, pts)
    return CartanResult(fam.name, pts, lhs3 <= rhs3, lhs3, rhs3, c, C, mono)


def fit_envelope(fam: CartanFamily, pts: Sequence[CartanPoint]) -> tuple[float, float]:
    """Fit log mes = log(C delta^J) - c u(eps) and lift C until it dominates all points."""
    use = [p for p in pts if p.measure > 0]
    if len(use) < 2:
        return math.nan, math.nan
    u = np.array([_cartan_u(p.eps, fam) for p in use])
    y = np.log([p.measure for p in use]) - fam.J * math.log(fam.delta)
    A = np.vstack([-u, np.ones_like(u)]).T
    (c, logC), *_ = np.linalg.lstsq(A, y, rcond=None)
    logC = float(np.max(y + c * u))
    return float(c), math.exp(logC)


def envelope_exponent(pts: Sequence[CartanPoint]) -> float:
    """Slope c of log mes against -log(1/eps), i.e. mes ~ eps^c."""
    use = [p for p in pts if p.measure > 0]
    if len(use) < 2:
        return math.nan
    x = np.log([1.0 / p.eps for p in use])
    y = np.log([p.measure for p in use])
    return float(-np.polyfit(x, y, 1)[0])
